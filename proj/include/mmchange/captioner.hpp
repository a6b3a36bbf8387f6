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

#ifndef MMCHANGE_CAPTIONER_HPP_
#define MMCHANGE_CAPTIONER_HPP_

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

namespace mmchange {

inline constexpr std::string_view kDefaultCaptionPrompt = "What are the components in this picture?";

struct CaptionerConfig {
  std::string endpoint;  // scheme://host[:port][/prefix]
  std::string prompt{kDefaultCaptionPrompt};
  double temperature = 0.2;
  double top_p = 0.9;
  int timeout_seconds = 30;
  int retries = 3;
  int retry_backoff_ms = 200;
  int max_concurrency = 4;
};

/// Network failures and timeouts; worth retrying.
class CaptionerTransientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-200 responses and malformed bodies.
class CaptionerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string base64_encode(std::string_view bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (static_cast<std::uint8_t>(bytes[i]) << 16) |
                            (static_cast<std::uint8_t>(bytes[i + 1]) << 8) | static_cast<std::uint8_t>(bytes[i + 2]);
    for (int s = 18; s >= 0; s -= 6) out.push_back(kAlphabet[(v >> s) & 63]);
  }
  if (i < bytes.size()) {
    std::uint32_t v = static_cast<std::uint8_t>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= static_cast<std::uint8_t>(bytes[i + 1]) << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

/// Client for POST <endpoint>/describe. Safe to share across threads: each
/// call opens its own connection.
class Captioner {
 public:
  explicit Captioner(CaptionerConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.endpoint.empty()) throw std::invalid_argument("captioner endpoint is empty");
    const auto scheme = cfg_.endpoint.find("://");
    const auto path_start = cfg_.endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    host_ = cfg_.endpoint.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? "" : cfg_.endpoint.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  const CaptionerConfig& config() const { return cfg_; }

  std::string request_body(std::string_view image_bytes) const {
    nlohmann::ordered_json body;
    body["image_b64"] = base64_encode(image_bytes);
    body["prompt"] = cfg_.prompt;
    body["temperature"] = cfg_.temperature;
    body["top_p"] = cfg_.top_p;
    return body.dump();
  }

  /// One attempt; throws CaptionerTransientError or CaptionerError.
  std::string describe_once(std::string_view image_bytes) const {
    httplib::Client client(host_);
    client.set_connection_timeout(cfg_.timeout_seconds, 0);
    client.set_read_timeout(cfg_.timeout_seconds, 0);
    client.set_write_timeout(cfg_.timeout_seconds, 0);
    auto res = client.Post(prefix_ + "/describe", request_body(image_bytes), "application/json");
    if (!res) throw CaptionerTransientError("captioner request failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw CaptionerError("captioner returned HTTP " + std::to_string(res->status) + ": " + res->body);
    try {
      auto j = nlohmann::json::parse(res->body);
      return j.at("caption").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw CaptionerError(std::string("captioner response is not {\"caption\": ...}: ") + e.what());
    }
  }

  /// Retries transient failures up to cfg.retries extra times.
  std::string describe(std::string_view image_bytes) const {
    for (int attempt = 0;; ++attempt) {
      try {
        return describe_once(image_bytes);
      } catch (const CaptionerTransientError&) {
        if (attempt >= cfg_.retries) throw;
        std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.retry_backoff_ms * (attempt + 1)));
      }
    }
  }

  std::string describe_file(const std::string& path) const {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CaptionerError("cannot read image " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return describe(bytes);
  }

  /// Caption every path with at most max_concurrency requests in flight.
  /// Results keep input order; the first failure is rethrown after all
  /// workers stop.
  std::vector<std::string> describe_files(const std::vector<std::string>& paths) const {
    std::vector<std::string> out(paths.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto worker = [&] {
      for (std::size_t i = next++; i < paths.size(); i = next++) {
        {
          std::lock_guard lock(error_mutex);
          if (error) return;
        }
        try {
          out[i] = describe_file(paths[i]);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    };
    const int n = std::max(1, std::min<int>(cfg_.max_concurrency, static_cast<int>(paths.size())));
    std::vector<std::thread> threads;
    for (int t = 0; t < n; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
    return out;
  }

 private:
  CaptionerConfig cfg_;
  std::string host_;
  std::string prefix_;
};

}  // namespace mmchange

#endif  // MMCHANGE_CAPTIONER_HPP_
