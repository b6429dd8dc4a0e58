#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace kap {

/// Ordered `key = value` pairs, one per line, `#` starts a comment.
/// Later assignments to the same key override earlier ones.
class FlatConfig {
 public:
  static FlatConfig parse(const std::string& text, const std::string& origin = "<string>");
  static FlatConfig load(const std::string& path);

  bool has(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;
  std::string get(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value);

  /// Entries in file order (overridden keys keep their first position).
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  /// Entries whose key starts with `prefix`, with the prefix stripped.
  FlatConfig with_prefix(const std::string& prefix) const;

  const std::string& origin() const { return origin_; }

 private:
  std::string origin_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);
double parse_double(const std::string& s, const std::string& what);
long long parse_int(const std::string& s, const std::string& what);
bool parse_bool(const std::string& s, const std::string& what);
std::string read_text_file(const std::string& path);

}  // namespace kap
