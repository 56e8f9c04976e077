#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace protohail {

/// Malformed configuration: unknown key, unparsable value, or a value out of range.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KeyValue {
  std::string key;
  std::string value;
  int line = 0;
};

/// Parses `key = value` lines. Blank lines and text after '#' are ignored;
/// keys are lower-cased with '-' folded to '_'.
std::vector<KeyValue> parse_key_values(const std::string& text);
std::string read_text_file(const std::string& path);

double parse_double(const KeyValue& kv);
long long parse_int(const KeyValue& kv);
bool parse_bool(const KeyValue& kv);

}  // namespace protohail
