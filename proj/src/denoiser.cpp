#include "fourplane/denoiser.hpp"

#include <json.hpp>

using json = nlohmann::ordered_json;

namespace fourplane::denoiser {

std::string denoiser_config_to_json(const DenoiserConfig& cfg) {
    json j;
    j["depth"] = cfg.depth;
    j["width"] = cfg.width;
    j["heads"] = cfg.heads;
    j["lora_rank"] = cfg.lora_rank;
    j["vocab"] = cfg.vocab;
    j["max_seq"] = cfg.max_seq;
    j["token_channels"] = cfg.token_channels;
    j["max_rows"] = cfg.max_rows;
    j["max_cols"] = cfg.max_cols;
    return j.dump(2);
}

DenoiserConfig denoiser_config_from_json(const std::string& text) {
    json j = json::parse(text);
    DenoiserConfig cfg;
    cfg.depth = j.value("depth", cfg.depth);
    cfg.width = j.value("width", cfg.width);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.lora_rank = j.value("lora_rank", cfg.lora_rank);
    cfg.vocab = j.value("vocab", cfg.vocab);
    cfg.max_seq = j.value("max_seq", cfg.max_seq);
    cfg.token_channels = j.value("token_channels", cfg.token_channels);
    cfg.max_rows = j.value("max_rows", cfg.max_rows);
    cfg.max_cols = j.value("max_cols", cfg.max_cols);
    cfg.validate();
    return cfg;
}

} // namespace fourplane::denoiser
