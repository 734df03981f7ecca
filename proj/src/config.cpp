#include "zdmix/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace zdmix {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
    Config c;
    c.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        for (char ch : key)
            if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '_' || ch == '-'))
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": bad character in key '" + key + "'");
        c.entries_.emplace_back(key, value);
    }
    return c;
}

Config Config::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
}

bool Config::has(const std::string& key) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == key; });
}

const std::string& Config::get(const std::string& key) const {
    const std::string* found = nullptr;
    for (const auto& e : entries_)
        if (e.first == key) found = &e.second;
    if (!found) throw ConfigError(origin_ + ": missing key '" + key + "'");
    return *found;
}

std::string Config::get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
}

std::vector<std::string> Config::get_all(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
        if (e.first == key) out.push_back(e.second);
    return out;
}

double Config::get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (trim(v.substr(pos)).empty()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError(origin_ + ": key '" + key + "' is not a number: '" + v + "'");
}

double Config::get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

long long Config::get_int(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t pos = 0;
        long long d = std::stoll(v, &pos);
        if (trim(v.substr(pos)).empty()) return d;
        // allow 1e7 style integers
        double x = std::stod(v, &pos);
        if (trim(v.substr(pos)).empty() && x == static_cast<double>(static_cast<long long>(x)))
            return static_cast<long long>(x);
    } catch (const std::exception&) {
    }
    throw ConfigError(origin_ + ": key '" + key + "' is not an integer: '" + v + "'");
}

long long Config::get_int_or(const std::string& key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
}

std::vector<double> parse_number_list(const std::string& s) {
    std::string t = s;
    for (char& ch : t)
        if (ch == ',' || ch == '(' || ch == ')' || ch == '[' || ch == ']' || ch == '{' || ch == '}') ch = ' ';
    std::istringstream in(t);
    std::vector<double> out;
    std::string tok;
    while (in >> tok) {
        std::size_t pos = 0;
        double d = 0;
        try {
            d = std::stod(tok, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != tok.size()) throw ConfigError("not a number: '" + tok + "' in '" + s + "'");
        out.push_back(d);
    }
    return out;
}

std::vector<double> Config::get_doubles(const std::string& key) const {
    try {
        return parse_number_list(get(key));
    } catch (const ConfigError& e) {
        throw ConfigError(origin_ + ": key '" + key + "': " + e.what());
    }
}

std::vector<long long> Config::get_ints(const std::string& key) const {
    std::vector<long long> out;
    for (double d : get_doubles(key)) {
        if (d != static_cast<double>(static_cast<long long>(d)))
            throw ConfigError(origin_ + ": key '" + key + "' expects integers");
        out.push_back(static_cast<long long>(d));
    }
    return out;
}

Config Config::subtree(const std::string& prefix) const {
    Config c;
    c.origin_ = origin_;
    const std::string p = prefix + ".";
    for (const auto& e : entries_)
        if (e.first.rfind(p, 0) == 0) c.entries_.emplace_back(e.first.substr(p.size()), e.second);
    return c;
}

void Config::set(const std::string& key, const std::string& value) {
    for (auto& e : entries_)
        if (e.first == key) {
            e.second = value;
            return;
        }
    entries_.emplace_back(key, value);
}

std::string Config::canonical() const {
    auto sorted = entries_;
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::string out;
    for (const auto& e : sorted) out += e.first + "=" + e.second + "\n";
    return out;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t Config::hash() const { return fnv1a(canonical()); }

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace zdmix
