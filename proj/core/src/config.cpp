#include "nodeflow/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nodeflow/errors.hpp"

namespace nodeflow {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const std::string t = trim(text);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ParseError("config: key \"" + key + "\" has malformed value \"" + text + "\"");
  }
  return v;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

void Config::set(const std::string& key, const std::string& value) { values_[trim(key)] = trim(value); }

bool Config::has(const std::string& key) const { return values_.count(key) > 0; }

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ContractError("config: missing key \"" + key + "\"");
  return it->second;
}

double Config::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }
long long Config::get_int(const std::string& key) const { return parse_number<long long>(key, get(key)); }
std::uint64_t Config::get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }

bool Config::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParseError("config: key \"" + key + "\" expects a boolean, got \"" + v + "\"");
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get(key))) out.push_back(parse_number<double>(key, item));
  return out;
}

std::vector<long long> Config::get_ints(const std::string& key) const {
  std::vector<long long> out;
  for (const auto& item : split_list(get(key))) out.push_back(parse_number<long long>(key, item));
  return out;
}

void Config::apply_override(const std::string& assignment, bool allow_new) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ParseError("config: expected key = value, got \"" + assignment + "\"");
  const std::string key = trim(std::string_view(assignment).substr(0, eq));
  if (key.empty()) throw ParseError("config: empty key in \"" + assignment + "\"");
  if (!allow_new && !has(key)) throw ParseError("config: unknown key \"" + key + "\"");
  set(key, assignment.substr(eq + 1));
}

void Config::merge(std::istream& is, const std::string& source, bool allow_new) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      apply_override(t, allow_new);
    } catch (const ParseError& e) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void Config::merge_file(const std::string& path, bool allow_new) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file " + path);
  merge(in, path, allow_new);
}

std::string Config::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string Config::hash_hex() const { return fnv1a_hex(serialize()); }

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace nodeflow
