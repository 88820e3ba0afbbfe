#ifndef SLIMFORMER_CONFIG_HPP
#define SLIMFORMER_CONFIG_HPP

#include <string>
#include <vector>

#include "json.hpp"

namespace slimformer {

// Run configuration: a JSON tree validated against the default tree (unknown
// keys and type mismatches are rejected) with dotted-path overrides. The
// grammar is documented in docs/file_formats.md.
nlohmann::json default_config();

nlohmann::json load_config_file(const std::string& path);

// "gates.target_sparsity=0.5"; the value parses as JSON when possible and
// falls back to a string.
void apply_override(nlohmann::json& tree, const std::string& assignment);

// Fills missing keys from the defaults, then rejects unknown keys/type clashes.
nlohmann::json resolve_config(nlohmann::json tree,
                              const std::vector<std::string>& overrides = {});

void write_json_file(const nlohmann::json& j, const std::string& path);

}  // namespace slimformer

#endif  // SLIMFORMER_CONFIG_HPP
