#include "secap/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "secap/errors.hpp"
#include "secap/rten.hpp"

namespace secap {

namespace {

constexpr char kMagic[] = "SECAPCKPT";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

nlohmann::ordered_json meta_to_json(const CheckpointMeta& m) {
  const auto& e = m.model.encoder;
  nlohmann::ordered_json j;
  j["encoder"] = {{"image_h", e.image_h},   {"image_w", e.image_w}, {"channels", e.channels},
                  {"patch", e.patch},       {"stride", e.stride},   {"olp_stride", e.olp_stride},
                  {"olp", e.olp},           {"embed_dim", e.embed_dim}, {"depth", e.depth},
                  {"heads", e.heads},       {"ffn_mult", e.ffn_mult}};
  j["prompt_len"] = m.model.prompt_len;
  j["prm_variant"] = std::string(to_string(m.model.variant));
  j["ablation"] = m.model.ablation.name();
  j["num_ids"] = m.model.num_ids;
  j["num_views"] = m.model.num_views;
  j["model_seed"] = m.model.seed;
  j["weights"] = {{"alpha", m.weights.alpha}, {"beta", m.weights.beta}, {"lambda", m.weights.lambda}};
  j["epoch"] = m.epoch;
  j["seed"] = m.seed;
  j["token_layout"] = m.model.ablation.vdt ? "cls,view,patches" : "cls,patches";
  return j;
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  const auto& e = j.at("encoder");
  auto& c = m.model.encoder;
  c.image_h = e.at("image_h");
  c.image_w = e.at("image_w");
  c.channels = e.at("channels");
  c.patch = e.at("patch");
  c.stride = e.at("stride");
  c.olp_stride = e.at("olp_stride");
  c.olp = e.at("olp");
  c.embed_dim = e.at("embed_dim");
  c.depth = e.at("depth");
  c.heads = e.at("heads");
  c.ffn_mult = e.at("ffn_mult");
  m.model.prompt_len = j.at("prompt_len");
  m.model.variant = parse_prm_variant(j.at("prm_variant").get<std::string>());
  m.model.ablation = Ablation::parse(j.at("ablation").get<std::string>());
  m.model.num_ids = j.at("num_ids");
  m.model.num_views = j.at("num_views");
  m.model.seed = j.at("model_seed");
  m.weights.alpha = j.at("weights").at("alpha");
  m.weights.beta = j.at("weights").at("beta");
  m.weights.lambda = j.at("weights").at("lambda");
  m.epoch = j.at("epoch");
  m.seed = j.at("seed");
  return m;
}

struct StoredTensor {
  DType dtype;
  Shape shape;
  std::vector<double> values;
};

}  // namespace

template <class T>
void save_checkpoint(std::ostream& out, const SecapModel<T>& model, const CheckpointMeta& meta) {
  out.write(kMagic, kMagicLen);
  le::put_u16(out, kCheckpointVersion);
  const std::string text = meta_to_json(meta).dump();
  le::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto& params = model.parameters().list();
  le::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    le::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    le::put_u8(out, static_cast<std::uint8_t>(dtype_of<T>()));
    le::put_u8(out, static_cast<std::uint8_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) le::put_u64(out, d);
    le::put_values(out, p.tensor.data().data(), p.tensor.numel());
  }
  if (!out) throw IoError("error writing checkpoint");
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const SecapModel<T>& model, const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  save_checkpoint(out, model, meta);
}

CheckpointMeta read_checkpoint_meta(std::istream& in) {
  char magic[kMagicLen];
  if (!in.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw IoError("not a checkpoint (bad magic)");
  const std::uint16_t version = le::get_u16(in);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t len = le::get_u32(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw IoError("truncated checkpoint metadata");
  try {
    return meta_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint metadata: ") + e.what());
  }
}

template <class T>
CheckpointMeta load_checkpoint(std::istream& in, SecapModel<T>& model) {
  const CheckpointMeta meta = read_checkpoint_meta(in);
  const std::uint32_t count = le::get_u32(in);
  std::map<std::string, StoredTensor> stored;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(le::get_u32(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw IoError("truncated checkpoint");
    StoredTensor t;
    const auto dt = le::get_u8(in);
    if (dt > 1) throw IoError("parameter " + name + " has unknown dtype " + std::to_string(dt));
    t.dtype = static_cast<DType>(dt);
    t.shape.resize(le::get_u8(in));
    for (auto& d : t.shape) d = le::get_u64(in);
    t.values.resize(shape_numel(t.shape));
    if (t.dtype == DType::F32) {
      std::vector<float> raw(t.values.size());
      le::get_values(in, raw.data(), raw.size());
      std::copy(raw.begin(), raw.end(), t.values.begin());
    } else {
      le::get_values(in, t.values.data(), t.values.size());
    }
    stored.emplace(std::move(name), std::move(t));
  }

  auto& params = model.parameters().list();
  if (stored.size() != params.size())
    throw ConfigError("checkpoint has " + std::to_string(stored.size()) + " parameters, model has " +
                      std::to_string(params.size()));
  for (const auto& p : params) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw ConfigError("checkpoint lacks parameter " + p.name);
    if (it->second.shape != p.tensor.shape())
      throw ConfigError("parameter " + p.name + " has shape " + shape_str(it->second.shape) + " in checkpoint, " +
                        shape_str(p.tensor.shape()) + " in model");
  }
  for (auto& p : params) {
    const auto& src = stored.at(p.name).values;
    auto dst = p.tensor.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
  return meta;
}

template <class T>
CheckpointMeta load_checkpoint(const std::filesystem::path& path, SecapModel<T>& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  return load_checkpoint(in, model);
}

std::unique_ptr<SecapModel<float>> load_model(const std::filesystem::path& path, CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  const CheckpointMeta m = read_checkpoint_meta(in);
  auto model = std::make_unique<SecapModel<float>>(m.model);
  in.seekg(0);
  load_checkpoint(in, *model);
  if (meta) *meta = m;
  return model;
}

#define SECAP_INSTANTIATE(T)                                                                           \
  template void save_checkpoint<T>(std::ostream&, const SecapModel<T>&, const CheckpointMeta&);        \
  template void save_checkpoint<T>(const std::filesystem::path&, const SecapModel<T>&,                 \
                                   const CheckpointMeta&);                                             \
  template CheckpointMeta load_checkpoint<T>(std::istream&, SecapModel<T>&);                           \
  template CheckpointMeta load_checkpoint<T>(const std::filesystem::path&, SecapModel<T>&);
SECAP_INSTANTIATE(float)
SECAP_INSTANTIATE(double)
#undef SECAP_INSTANTIATE

}  // namespace secap
