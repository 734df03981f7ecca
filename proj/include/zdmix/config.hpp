#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace zdmix {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/** \brief Flat dotted-key text config: one `key = value` per line, `#` comments.
 *
 * Keys may repeat (e.g. one `obstacle.center` line per disk); order is kept.
 */
class Config {
public:
    static Config parse(const std::string& text, const std::string& origin = "<string>");
    static Config load(const std::string& path);

    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    std::vector<std::string> get_all(const std::string& key) const;

    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    long long get_int(const std::string& key) const;
    long long get_int_or(const std::string& key, long long fallback) const;
    std::vector<double> get_doubles(const std::string& key) const;
    std::vector<long long> get_ints(const std::string& key) const;

    /// Entries whose key starts with prefix + ".", prefix stripped.
    Config subtree(const std::string& prefix) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
    void set(const std::string& key, const std::string& value);

    /// Canonical text (sorted keys, stable within repeats); basis of the hash.
    std::string canonical() const;
    std::uint64_t hash() const;

    const std::string& origin() const { return origin_; }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::string origin_;
};

std::vector<double> parse_number_list(const std::string& s);
std::uint64_t fnv1a(const std::string& s);
std::string hex64(std::uint64_t h);

}  // namespace zdmix
