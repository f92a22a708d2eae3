#pragma once

// Thin wrapper over cpp-httplib shared by the chat, embedding and GitHub
// clients: base-URL handling, transport error mapping, Retry-After parsing.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <optional>
#include <string>
#include <string_view>

#include <httplib.h>

#include "emocause/error.hpp"

namespace emocause::detail {

struct BaseUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash, may be empty

  static BaseUrl parse(std::string_view url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos) {
      throw Error(ErrorKind::kConfiguration, "base URL needs a scheme: " + std::string(url));
    }
    auto path_start = url.find('/', scheme_end + 3);
    BaseUrl b;
    b.origin = std::string(url.substr(0, path_start));
    if (path_start != std::string_view::npos) b.prefix = std::string(url.substr(path_start));
    while (!b.prefix.empty() && b.prefix.back() == '/') b.prefix.pop_back();
    return b;
  }

  std::string path(std::string_view p) const { return prefix + std::string(p); }
};

struct HttpResponse {
  int status = 0;
  std::string body;
  httplib::Headers headers;

  std::string header(const std::string& key) const {
    for (const auto& [k, v] : headers) {
      if (k.size() == key.size() &&
          std::equal(k.begin(), k.end(), key.begin(), [](char a, char b) {
            return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b));
          })) {
        return v;
      }
    }
    return {};
  }
};

inline httplib::Client make_client(const BaseUrl& base, std::chrono::milliseconds timeout) {
  httplib::Client cli(base.origin);
  auto secs = static_cast<time_t>(timeout.count() / 1000);
  auto usecs = static_cast<time_t>((timeout.count() % 1000) * 1000);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  cli.set_follow_location(true);
  return cli;
}

inline HttpResponse to_response(const httplib::Result& res, const std::string& what) {
  if (!res) {
    auto err = res.error();
    auto msg = what + ": " + httplib::to_string(err);
    if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
        err == httplib::Error::Write) {
      throw Error(ErrorKind::kTimeout, msg);
    }
    throw Error(ErrorKind::kProvider, msg, 0);
  }
  return {res->status, res->body, res->headers};
}

inline HttpResponse post_json(const BaseUrl& base, std::string_view path, const std::string& body,
                              const httplib::Headers& headers, std::chrono::milliseconds timeout) {
  auto cli = make_client(base, timeout);
  auto full = base.path(path);
  return to_response(cli.Post(full, headers, body, "application/json"), "POST " + full);
}

inline HttpResponse get(const BaseUrl& base, const std::string& path_and_query,
                        const httplib::Headers& headers, std::chrono::milliseconds timeout) {
  auto cli = make_client(base, timeout);
  return to_response(cli.Get(path_and_query, headers), "GET " + path_and_query);
}

/// Retry-After as delta-seconds. HTTP-date values are not interpreted.
inline std::optional<std::chrono::milliseconds> parse_retry_after(const HttpResponse& r) {
  auto v = r.header("Retry-After");
  if (v.empty()) return std::nullopt;
  char* end = nullptr;
  double secs = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || secs < 0) return std::nullopt;
  return std::chrono::milliseconds(static_cast<long long>(secs * 1000.0));
}

/// Maps a non-2xx status onto the library error kinds.
[[noreturn]] inline void throw_for_status(const HttpResponse& r, const std::string& what) {
  std::string body = r.body.size() > 500 ? r.body.substr(0, 500) : r.body;
  auto msg = what + " returned " + std::to_string(r.status) + ": " + body;
  if (r.status == 401 || r.status == 403) throw Error(ErrorKind::kAuth, msg, r.status);
  if (r.status == 404) throw Error(ErrorKind::kNotFound, msg, r.status);
  if (r.status == 429) {
    Error e(ErrorKind::kRateLimited, msg, r.status);
    e.with_retry_after(parse_retry_after(r));
    throw e;
  }
  Error e(ErrorKind::kProvider, msg, r.status);
  e.with_retry_after(parse_retry_after(r));
  throw e;
}

inline std::string env_or_empty(const std::string& name) {
  if (name.empty()) return {};
  const char* v = std::getenv(name.c_str());
  return v ? std::string(v) : std::string();
}

}  // namespace emocause::detail
