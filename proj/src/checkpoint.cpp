#include "radioses/nn/checkpoint.hpp"

#include "radioses/detail/binio.hpp"

namespace radioses::nn {

namespace {
constexpr char kMagic[4] = {'R', 'S', 'N', 'N'};
constexpr std::uint32_t kVersion = 1;

void w_str(std::ostream& f, const std::string& s) {
  detail::w_u32(f, std::uint32_t(s.size()));
  f.write(s.data(), std::streamsize(s.size()));
}

std::string r_str(std::istream& f) {
  std::uint32_t n = detail::r_u32(f);
  require(n <= (1u << 20), "checkpoint: unreasonable string length");
  std::string s(n, '\0');
  f.read(s.data(), std::streamsize(n));
  require(bool(f), "checkpoint: unexpected end of file");
  return s;
}
}  // namespace

nlohmann::json config_to_json(const NetConfig& cfg) {
  return {{"n_src", cfg.n_src},
          {"sample_rate", cfg.sample_rate},
          {"radio_rate", cfg.radio_rate},
          {"kernel", cfg.kernel},
          {"stride", cfg.stride},
          {"n_enc_audio", cfg.n_enc_audio},
          {"n_audio", cfg.n_audio},
          {"k_audio", cfg.k_audio},
          {"n_enc_radio", cfg.n_enc_radio},
          {"n_radio", cfg.n_radio},
          {"k_radio", cfg.k_radio},
          {"h_audio", cfg.h_audio},
          {"h_radio", cfg.h_radio},
          {"h_fused", cfg.h_fused},
          {"pre_blocks", cfg.pre_blocks},
          {"post_blocks", cfg.post_blocks},
          {"k_stage_first", cfg.k_stage_first},
          {"use_radio", cfg.use_radio}};
}

NetConfig config_from_json(const nlohmann::json& j) {
  NetConfig cfg;
  cfg.n_src = j.at("n_src").get<int>();
  cfg.sample_rate = j.at("sample_rate").get<int>();
  cfg.radio_rate = j.at("radio_rate").get<int>();
  cfg.kernel = j.at("kernel").get<int>();
  cfg.stride = j.at("stride").get<int>();
  cfg.n_enc_audio = j.at("n_enc_audio").get<int>();
  cfg.n_audio = j.at("n_audio").get<int>();
  cfg.k_audio = j.at("k_audio").get<int>();
  cfg.n_enc_radio = j.at("n_enc_radio").get<int>();
  cfg.n_radio = j.at("n_radio").get<int>();
  cfg.k_radio = j.at("k_radio").get<int>();
  cfg.h_audio = j.at("h_audio").get<int>();
  cfg.h_radio = j.at("h_radio").get<int>();
  cfg.h_fused = j.at("h_fused").get<int>();
  cfg.pre_blocks = j.at("pre_blocks").get<int>();
  cfg.post_blocks = j.at("post_blocks").get<int>();
  cfg.k_stage_first = j.at("k_stage_first").get<bool>();
  cfg.use_radio = j.at("use_radio").get<bool>();
  cfg.validate();
  return cfg;
}

void save_checkpoint(const std::string& path, const NetConfig& cfg,
                     const ModelParams<float>& params) {
  std::ofstream f(path, std::ios::binary);
  require(bool(f), "checkpoint: cannot open " + path);
  detail::w_magic(f, kMagic);
  detail::w_u32(f, kVersion);
  w_str(f, config_to_json(cfg).dump());
  detail::w_u32(f, std::uint32_t(params.items.size()));
  for (const auto& it : params.items) {
    w_str(f, it.name);
    detail::w_u32(f, std::uint32_t(it.tensor.shape.size()));
    for (int d : it.tensor.shape) detail::w_u32(f, std::uint32_t(d));
    detail::w_f32_block(f, it.tensor.values.data(), it.tensor.values.size());
  }
  require(bool(f), "checkpoint: write failed on " + path);
}

std::pair<NetConfig, ModelParams<float>> load_checkpoint(
    const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(bool(f), "checkpoint: cannot open " + path);
  detail::expect_magic(f, kMagic, "RSNN");
  std::uint32_t version = detail::r_u32(f);
  require(version == kVersion, "checkpoint: unsupported version in " + path);
  NetConfig cfg = config_from_json(nlohmann::json::parse(r_str(f)));
  ModelParams<float> params;
  std::uint32_t n = detail::r_u32(f);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r_str(f);
    std::uint32_t rank = detail::r_u32(f);
    require(rank >= 1 && rank <= 4, "checkpoint: bad tensor rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) {
      d = int(detail::r_u32(f));
      require(d > 0, "checkpoint: bad tensor dim");
    }
    auto& t = params.add(name, shape);
    detail::r_f32_block(f, t.values.data(), t.values.size());
  }
  return {cfg, std::move(params)};
}

}  // namespace radioses::nn
