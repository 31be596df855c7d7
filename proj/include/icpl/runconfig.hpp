#pragma once

// Run configuration: a flat key=value file, overridable by environment
// variables and command-line flags (flags win, then environment, then file,
// then defaults). Every run writes a manifest with the config hash and
// input-file hashes so artifacts can be traced to exact inputs.

#include <cstdlib>
#include <map>
#include <string>

#include "egises.hpp"
#include "probes.hpp"
#include "util.hpp"
#include "version.hpp"

namespace icpl {

struct RunConfig {
    std::string corpus_path;
    std::string users_path;
    std::string out_dir = "out";
    std::uint64_t seed = 20240601;
    int workers = 1;
    int pairs_per_doc = 3;
    int max_docs = 0;  // 0 = no cap; otherwise a deterministic sample
    std::string styles;  // comma list; empty = all six
    std::string rules = "empirical";
    double epsilon = 1e-8;
    double doc_distance_floor = 1e-9;
    bool include_self_term = true;
    std::string divergence = "jsd";
    double tau_u = -1.0;  // < 0 -> median of reference divergences
    double tau_s = -1.0;
    std::string adapter = "oracle";  // oracle | playback | http
    std::string oracle = "parrot";
    std::string playback_path;
    std::string http_host = "127.0.0.1";
    int http_port = 8080;
    std::string http_path = "/v1/complete";
    std::string model_id = "oracle";
    double temperature = 0.6;
    int top_k = 16;
    int max_tokens = 4096;

    void set(const std::string& key, const std::string& value) {
        if (key == "corpus") corpus_path = value;
        else if (key == "users") users_path = value;
        else if (key == "out_dir") out_dir = value;
        else if (key == "seed") seed = std::stoull(value);
        else if (key == "workers") workers = std::stoi(value);
        else if (key == "pairs_per_doc") pairs_per_doc = std::stoi(value);
        else if (key == "max_docs") max_docs = std::stoi(value);
        else if (key == "styles") styles = value;
        else if (key == "rules") rules = value;
        else if (key == "epsilon") epsilon = std::stod(value);
        else if (key == "doc_distance_floor") doc_distance_floor = std::stod(value);
        else if (key == "include_self_term") include_self_term = value == "true" || value == "1";
        else if (key == "divergence") divergence = value;
        else if (key == "tau_u") tau_u = std::stod(value);
        else if (key == "tau_s") tau_s = std::stod(value);
        else if (key == "adapter") adapter = value;
        else if (key == "oracle") oracle = value;
        else if (key == "playback") playback_path = value;
        else if (key == "http_host") http_host = value;
        else if (key == "http_port") http_port = std::stoi(value);
        else if (key == "http_path") http_path = value;
        else if (key == "model_id") model_id = value;
        else if (key == "temperature") temperature = std::stod(value);
        else if (key == "top_k") top_k = std::stoi(value);
        else if (key == "max_tokens") max_tokens = std::stoi(value);
        else throw std::invalid_argument("unknown config key: " + key);
    }

    void load_file(const std::string& path) {
        for (const std::string& raw : split(read_file(path), '\n')) {
            std::string line = trim(raw);
            if (line.empty() || line[0] == '#') continue;
            auto eq = line.find('=');
            if (eq == std::string::npos) throw std::runtime_error(path + ": expected key=value, got: " + line);
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    void apply_env() {
        if (const char* v = std::getenv("ICPL_CORPUS")) corpus_path = v;
        if (const char* v = std::getenv("ICPL_USERS")) users_path = v;
        if (const char* v = std::getenv("ICPL_OUT_DIR")) out_dir = v;
    }

    MetricConfig metric_config() const {
        MetricConfig mc;
        mc.epsilon = epsilon;
        mc.doc_distance_floor = doc_distance_floor;
        mc.include_self_term = include_self_term;
        mc.divergence = divergence_from_name(divergence);
        return mc;
    }

    DecodingConfig decoding() const { return {temperature, top_k, max_tokens}; }

    std::vector<PromptStyle> style_list() const {
        if (styles.empty()) return {all_styles.begin(), all_styles.end()};
        std::vector<PromptStyle> out;
        for (const std::string& tok : split(styles, ','))
            if (!trim(tok).empty()) out.push_back(style_from_name(trim(tok)));
        if (out.empty()) throw std::invalid_argument("styles: empty list");
        return out;
    }

    // canonical form: every field, sorted keys, hashed for the manifest
    json to_json() const {
        return json{{"adapter", adapter},
                    {"corpus", corpus_path},
                    {"divergence", divergence},
                    {"doc_distance_floor", doc_distance_floor},
                    {"epsilon", epsilon},
                    {"http_host", http_host},
                    {"http_path", http_path},
                    {"http_port", http_port},
                    {"include_self_term", include_self_term},
                    {"max_docs", max_docs},
                    {"max_tokens", max_tokens},
                    {"model_id", model_id},
                    {"oracle", oracle},
                    {"out_dir", out_dir},
                    {"pairs_per_doc", pairs_per_doc},
                    {"playback", playback_path},
                    {"rules", rules},
                    {"seed", seed},
                    {"styles", styles},
                    {"tau_s", tau_s},
                    {"tau_u", tau_u},
                    {"temperature", temperature},
                    {"top_k", top_k},
                    {"users", users_path},
                    {"workers", workers}};
    }

    std::string config_hash() const { return fnv1a64_hex(to_json().dump()); }
};

// Manifest: enough to reproduce or audit a run. No timestamps — reruns of
// the same inputs must produce byte-identical artifacts.
inline json run_manifest(const RunConfig& cfg, const std::map<std::string, std::string>& input_paths,
                         const json& counts) {
    json inputs = json::object();
    for (const auto& [name, path] : input_paths)
        inputs[name] = json{{"path", path}, {"fnv1a64", fnv1a64_hex(read_file(path))}};
    return json{{"toolkit_version", toolkit_version},
                {"config_hash", cfg.config_hash()},
                {"config", cfg.to_json()},
                {"inputs", inputs},
                {"counts", counts},
                {"seed", cfg.seed}};
}

}  // namespace icpl
