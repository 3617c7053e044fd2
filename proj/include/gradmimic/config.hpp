#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gradmimic {

/// Flat sectioned key = value configuration:
///
///     # comment
///     [dataset]
///     noise_level = 0.5
///
/// Keys are addressed as `section.key`. Values are kept as text; typed
/// accessors throw ConfigError naming the key. Relative paths resolve
/// against the directory of the file the config was loaded from.
class RunConfig {
public:
    static RunConfig parse(std::string_view text, const std::string& source = "<config>");
    static RunConfig load(const std::filesystem::path& path);

    /// Override (or add) a value, as `--set section.key=value` does.
    void set(const std::string& key, std::string value);
    /// Parse a `section.key=value` override.
    void set_assignment(std::string_view assignment);

    bool contains(const std::string& key) const { return values_.contains(key); }
    const std::map<std::string, std::string>& entries() const noexcept { return values_; }
    const std::filesystem::path& base_dir() const noexcept { return base_dir_; }

    std::optional<std::string> text(const std::string& key) const;
    std::optional<double> number(const std::string& key) const;
    std::optional<std::size_t> count(const std::string& key) const;
    std::optional<std::uint64_t> u64(const std::string& key) const;
    std::optional<bool> flag(const std::string& key) const;
    std::optional<std::vector<double>> number_list(const std::string& key) const;
    std::optional<std::filesystem::path> path(const std::string& key) const;

    /// Throws ConfigError for the first key not in `known`.
    void reject_unknown(const std::vector<std::string>& known) const;

private:
    std::map<std::string, std::string> values_;
    std::filesystem::path base_dir_ = ".";
};

struct ConfigKey {
    std::string key;
    std::string description;
};

/// Every key understood by the harness and CLI, in documentation order.
const std::vector<ConfigKey>& all_config_keys();

}  // namespace gradmimic
