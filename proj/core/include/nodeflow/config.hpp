#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace nodeflow {

// Flat "key = value" configuration. Lines starting with '#' are comments.
class Config {
 public:
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;

  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<long long> get_ints(const std::string& key) const;

  // Keys must already exist unless allow_new is set.
  void merge(std::istream& is, const std::string& source, bool allow_new = false);
  void merge_file(const std::string& path, bool allow_new = false);
  // "key=value"
  void apply_override(const std::string& assignment, bool allow_new = false);

  // Sorted "key = value" lines.
  std::string serialize() const;
  std::string hash_hex() const;

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(std::string_view data);

}  // namespace nodeflow
