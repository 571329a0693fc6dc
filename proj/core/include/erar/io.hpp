#pragma once

#include <string>
#include <utility>
#include <vector>

#include "erar/asac.hpp"
#include "erar/exact.hpp"
#include "erar/mdp.hpp"

namespace erar {

/// MDP <-> JSON text: {num_states, num_actions, transitions, rewards, prior}
/// with nested arrays. Round-trips are lossless at full double precision.
std::string mdp_to_json_string(const TabularMdp& mdp);
TabularMdp mdp_from_json_string(const std::string& text);
TabularMdp load_mdp_file(const std::string& path);
void save_mdp_file(const TabularMdp& mdp, const std::string& path);

/// TrainerConfig <-> JSON with keys named exactly after the struct fields.
/// Parsing is strict: unknown keys raise std::invalid_argument; missing keys
/// keep their defaults.
std::string config_to_json_string(const TrainerConfig& config);
TrainerConfig config_from_json_string(const std::string& text);
TrainerConfig load_config_file(const std::string& path);

std::string verify_report_to_json_string(const VerifyReport& report);

std::string solve_result_to_json_string(const PolicyIterationResult& result, double inv_temperature);

struct RunManifest {
    std::string command;
    std::string config_json; // resolved configuration as a JSON object
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> artifacts; // (kind, path)
    long wall_ms = 0;
};

/// Written atomically (temp file + rename) so a manifest on disk always
/// describes a finished run.
void write_manifest(const RunManifest& manifest, const std::string& path);

std::string read_file(const std::string& path);
void atomic_write_file(const std::string& path, const std::string& content);

} // namespace erar
