#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

// Source tree paths injected by CMake.
inline std::filesystem::path source_path(const std::string& rel) { return std::filesystem::path(MGUARD_SOURCE_DIR) / rel; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// MGUARD_UPDATE_FIXTURES=1 rewrites frozen fixtures instead of comparing.
inline bool updating_fixtures() {
  const char* v = std::getenv("MGUARD_UPDATE_FIXTURES");
  return v && std::string(v) == "1";
}

#include <optional>

#include "mguard/error.hpp"

// Error kinds are values, not types, so CHECK_THROWS_AS cannot name them.
template <typename F>
std::optional<mguard::ErrorKind> error_kind(F&& f) {
  try {
    f();
  } catch (const mguard::Error& e) {
    return e.kind();
  } catch (...) {
  }
  return std::nullopt;
}
#define CHECK_KIND(expr, K) CHECK(error_kind([&] { (void)(expr); }) == mguard::ErrorKind::K)
