#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "telemloss/error.hpp"
#include "telemloss/text.hpp"

namespace telemloss {

/// Flat `key = value` configuration; '#' starts a comment line. Keys keep
/// their file order for echoing into outputs.
class KeyValueConfig {
public:
    static KeyValueConfig parse(std::istream& in, std::string_view source = {})
    {
        require(static_cast<bool>(in), ErrorCode::unreadable_stream,
                "cannot read config" + (source.empty() ? std::string() : " '" + std::string(source) + "'"));
        KeyValueConfig cfg;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto t = text::trim(line);
            if (t.empty() || t.starts_with('#')) {
                continue;
            }
            const auto eq = t.find('=');
            require(eq != std::string_view::npos, ErrorCode::parse_error,
                    "config line " + std::to_string(line_no) + ": expected key = value");
            const std::string key(text::trim(t.substr(0, eq)));
            require(!key.empty(), ErrorCode::parse_error, "config line " + std::to_string(line_no) + ": empty key");
            cfg.set(key, std::string(text::trim(t.substr(eq + 1))));
        }
        return cfg;
    }

    void set(const std::string& key, std::string value)
    {
        if (!values_.contains(key)) {
            order_.push_back(key);
        }
        values_[key] = std::move(value);
    }

    bool has(std::string_view key) const { return values_.find(key) != values_.end(); }

    std::optional<std::string> get(std::string_view key) const
    {
        const auto it = values_.find(key);
        if (it == values_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    std::string string_or(std::string_view key, std::string fallback) const
    {
        return get(key).value_or(std::move(fallback));
    }

    double number(std::string_view key) const
    {
        const auto v = get(key);
        require(v.has_value(), ErrorCode::invalid_argument, "config key '" + std::string(key) + "' is required");
        return parse_number(key, *v);
    }

    double number_or(std::string_view key, double fallback) const
    {
        const auto v = get(key);
        return v ? parse_number(key, *v) : fallback;
    }

    std::optional<double> optional_number(std::string_view key) const
    {
        const auto v = get(key);
        return v ? std::optional(parse_number(key, *v)) : std::nullopt;
    }

    std::uint64_t count(std::string_view key) const
    {
        const auto v = get(key);
        require(v.has_value(), ErrorCode::invalid_argument, "config key '" + std::string(key) + "' is required");
        return parse_count(key, *v);
    }

    std::uint64_t count_or(std::string_view key, std::uint64_t fallback) const
    {
        const auto v = get(key);
        return v ? parse_count(key, *v) : fallback;
    }

    /// Comma-separated numbers.
    std::vector<double> numbers(std::string_view key) const
    {
        const auto v = get(key);
        require(v.has_value(), ErrorCode::invalid_argument, "config key '" + std::string(key) + "' is required");
        std::vector<double> out;
        std::string_view rest = *v;
        while (true) {
            const auto comma = rest.find(',');
            out.push_back(parse_number(key, text::trim(rest.substr(0, comma))));
            if (comma == std::string_view::npos) {
                break;
            }
            rest.remove_prefix(comma + 1);
        }
        return out;
    }

    /// Keys starting with `prefix`, in file order, with the prefix removed.
    std::vector<std::pair<std::string, std::string>> with_prefix(std::string_view prefix) const
    {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& k : order_) {
            if (k.starts_with(prefix)) {
                out.emplace_back(k.substr(prefix.size()), values_.at(k));
            }
        }
        return out;
    }

    /// Rejects keys outside `known` (and outside any of `prefixes`) so typos
    /// do not silently fall back to defaults.
    void require_known(const std::set<std::string, std::less<>>& known,
                       const std::vector<std::string_view>& prefixes = {}) const
    {
        for (const auto& k : order_) {
            bool ok = known.contains(k);
            for (auto p : prefixes) {
                ok = ok || k.starts_with(p);
            }
            require(ok, ErrorCode::invalid_argument, "unknown config key '" + k + "'");
        }
    }

    std::vector<std::pair<std::string, std::string>> entries() const
    {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& k : order_) {
            out.emplace_back(k, values_.at(k));
        }
        return out;
    }

private:
    static double parse_number(std::string_view key, std::string_view v)
    {
        const auto d = text::parse_double(v);
        require(d.has_value(), ErrorCode::invalid_argument,
                "config key '" + std::string(key) + "' is not a number: '" + std::string(v) + "'");
        return *d;
    }

    static std::uint64_t parse_count(std::string_view key, std::string_view v)
    {
        const auto n = text::parse_int<std::uint64_t>(v);
        require(n.has_value(), ErrorCode::invalid_argument,
                "config key '" + std::string(key) + "' is not a non-negative integer: '" + std::string(v) + "'");
        return *n;
    }

    std::map<std::string, std::string, std::less<>> values_;
    std::vector<std::string> order_;
};

}  // namespace telemloss
