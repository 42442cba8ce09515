// Copyright 2026 The xdet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef XDET_ERROR_H_
#define XDET_ERROR_H_

#include <stdexcept>
#include <string>

namespace xdet {

// Error categories surfaced by loaders and evaluators. The CLI maps
// kUsage to exit code 2 and every other kind to exit code 1.
enum class ErrorKind {
  kInvalidLabel,
  kParse,
  kVocabulary,
  kReferential,
  kRange,
  kEmbedding,
  kMapping,
  kUsage,
  kIo,
};

const char* ErrorKindName(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(ErrorKindName(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace xdet

#endif  // XDET_ERROR_H_
