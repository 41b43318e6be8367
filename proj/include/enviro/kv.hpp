#pragma once

#include <map>
#include <string>
#include <vector>

namespace enviro {

// Plain-text key-value configuration: one `key = value` per line,
// '#' starts a comment, blank lines ignored. Keys are dotted
// (e.g. "dsp.fft_size"). Later assignments override earlier ones.
class KvConfig {
public:
    KvConfig() = default;

    static KvConfig parse_file(const std::string& path);
    static KvConfig parse_text(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    long long get_int64(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Required-key variants: throw ConfigError when the key is absent.
    std::string require_str(const std::string& key) const;
    double require_double(const std::string& key) const;
    int require_int(const std::string& key) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    // Merge: entries of `other` override entries of *this.
    void merge(const KvConfig& other);

    std::string serialize() const;

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace enviro
