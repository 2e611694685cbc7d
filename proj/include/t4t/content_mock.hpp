// Copyright 2026 The t4t Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Offline responder that answers every prompt kind from the prompt's content
// alone. Contestant label mentions are normalized away before hashing, so
// relabelling a session relabels the answers the same way.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "t4t/corpus.hpp"
#include "t4t/provider.hpp"

namespace t4t {

struct ContentMockOptions {
  /// Labels whose scores tie are ordered by label_index(tie_break.inverse()(l)).
  /// Passing the relabelling applied to the session keeps ties equivariant.
  LabelPermutation tie_break;
  /// Mixed into hashes of stochastic requests (temperature > 0).
  bool vary_with_sample_tag = true;
};

/// 64-bit FNV-1a over lowercased text with "number one/two/three" mentions
/// collapsed to one token.
std::uint64_t content_hash(std::string_view text);

/// Completion the content mock gives for one request.
std::string content_mock_completion(const GenerationRequest& request,
                                    const ContentMockOptions& options = {});

/// Script whose single entry answers with content_mock_completion.
MockScript content_mock_script(const ContentMockOptions& options = {});

}  // namespace t4t
