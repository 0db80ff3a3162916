#include "dm/config.hpp"

#include <fstream>
#include <sstream>

namespace dm {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

Config Config::parse(std::string_view text) {
    Config c;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const auto line = trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const auto key = trim(line.substr(0, eq));
        if (key.empty() || key.find_first_of(" \t") != std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": bad key '" + std::string(key) + "'");
        }
        c.values_[std::string(key)] = std::string(trim(line.substr(eq + 1)));
    }
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::optional<std::string> Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string Config::get_or(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

long long Config::get_int(const std::string& key, long long fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        const long long x = std::stoll(*v, &used);
        if (used == v->size()) return x;
    } catch (const std::logic_error&) {
    }
    throw ConfigError("config key " + key + ": '" + *v + "' is not an integer");
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        const double x = std::stod(*v, &used);
        if (used == v->size()) return x;
    } catch (const std::logic_error&) {
    }
    throw ConfigError("config key " + key + ": '" + *v + "' is not a number");
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw ConfigError("config key " + key + ": '" + *v + "' is not a boolean");
}

} // namespace dm
