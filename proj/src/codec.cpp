#include "fourplane/codec.hpp"

#include <json.hpp>

using json = nlohmann::ordered_json;

namespace fourplane::codec {

std::string codec_config_to_json(const CodecConfig& cfg) {
    json j;
    j["f_t"] = cfg.f_t;
    j["f_s"] = cfg.f_s;
    j["latent_channels"] = cfg.latent_channels;
    j["base_channels"] = cfg.base_channels;
    j["residual_blocks"] = cfg.residual_blocks;
    j["temporal_down_layers"] = cfg.temporal_down_layers;
    j["spatial_down_layers"] = cfg.spatial_down_layers;
    j["variational"] = cfg.variational;
    j["kl_weight"] = cfg.kl_weight;
    j["activation"] = cfg.activation == Activation::Silu ? "silu" : "relu";
    return j.dump(2);
}

CodecConfig codec_config_from_json(const std::string& text) {
    json j = json::parse(text);
    CodecConfig cfg;
    cfg.f_t = j.value("f_t", cfg.f_t);
    cfg.f_s = j.value("f_s", cfg.f_s);
    cfg.latent_channels = j.value("latent_channels", cfg.latent_channels);
    cfg.base_channels = j.value("base_channels", cfg.base_channels);
    cfg.residual_blocks = j.value("residual_blocks", cfg.residual_blocks);
    cfg.temporal_down_layers = j.value("temporal_down_layers", cfg.temporal_down_layers);
    cfg.spatial_down_layers = j.value("spatial_down_layers", cfg.spatial_down_layers);
    cfg.variational = j.value("variational", cfg.variational);
    cfg.kl_weight = j.value("kl_weight", cfg.kl_weight);
    if (j.value("activation", "silu") == std::string("relu"))
        cfg.activation = Activation::Relu;
    cfg.validate();
    return cfg;
}

} // namespace fourplane::codec
