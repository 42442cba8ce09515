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

#ifndef XDET_CLI_H_
#define XDET_CLI_H_

#include <ostream>
#include <string>
#include <vector>

namespace xdet {

// Exit codes: 0 success, 1 evaluation-domain error, 2 usage/parse error.
int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err);

}  // namespace xdet

#endif  // XDET_CLI_H_
