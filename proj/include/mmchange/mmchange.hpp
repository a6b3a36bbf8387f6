// Copyright 2026 The MMChange Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MMCHANGE_MMCHANGE_HPP_
#define MMCHANGE_MMCHANGE_HPP_

// Everything except the HTTP captioner, which pulls in httplib.

#include "mmchange/ablation.hpp"
#include "mmchange/config.hpp"
#include "mmchange/data.hpp"
#include "mmchange/encoders.hpp"
#include "mmchange/gradcheck.hpp"
#include "mmchange/metrics.hpp"
#include "mmchange/model.hpp"
#include "mmchange/training.hpp"
#include "mmchange/visualize.hpp"

#endif  // MMCHANGE_MMCHANGE_HPP_
