#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace v2x {

// Key-value text config with [section] headers. Keys are addressed as
// "section.key". Lines starting with '#' or ';' are comments.
class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text);

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const;

    void set(const std::string& key, const std::string& value) { entries_[key] = value; }

    // Rejects entries under `section` whose key is not in valid_keys; the error
    // message names the offender and lists what is accepted.
    void validate_section(const std::string& section, const std::vector<std::string>& valid_keys) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

}  // namespace v2x
