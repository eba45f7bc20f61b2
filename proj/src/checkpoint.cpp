#include "unirit/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <map>

#include "unirit/io.hpp"

namespace unirit {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const unsigned char* data, std::size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    const std::uint32_t b0 = data[i];
    const std::uint32_t b1 = i + 1 < n ? data[i + 1] : 0;
    const std::uint32_t b2 = i + 2 < n ? data[i + 2] : 0;
    const std::uint32_t v = (b0 << 16) | (b1 << 8) | b2;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < n ? kAlphabet[(v >> 6) & 63] : '=';
    out += i + 2 < n ? kAlphabet[v & 63] : '=';
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kAlphabet[i])] = i;
  if (text.size() % 4 != 0) throw ValidationError("checkpoint: malformed base64 payload");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t v = 0;
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + static_cast<std::size_t>(k)];
      int d = 0;
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        ++pad;
      } else {
        d = lut[static_cast<unsigned char>(c)];
        if (d < 0 || pad > 0) throw ValidationError("checkpoint: malformed base64 payload");
      }
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<unsigned char>(v >> 16));
    if (pad < 2) out.push_back(static_cast<unsigned char>(v >> 8));
    if (pad < 1) out.push_back(static_cast<unsigned char>(v));
  }
  return out;
}

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

ordered_json tensor_to_json(const nn::Tensor2D<float>& t) {
  ordered_json j;
  j["shape"] = {t.rows(), t.cols()};
  j["data"] = base64_encode(reinterpret_cast<const unsigned char*>(t.data()), static_cast<std::size_t>(t.size()) * 4);
  return j;
}

nn::Tensor2D<float> tensor_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
  if (shape.size() != 2 || shape[0] != rows || shape[1] != cols)
    throw ValidationError("checkpoint: " + what + " has an unexpected shape");
  const auto bytes = base64_decode(j.at("data").get<std::string>());
  if (bytes.size() != static_cast<std::size_t>(rows * cols) * 4)
    throw ValidationError("checkpoint: " + what + " payload has the wrong length");
  nn::Tensor2D<float> t(rows, cols);
  std::memcpy(t.data(), bytes.data(), bytes.size());
  if (!t.allFinite()) throw ValidationError("checkpoint: " + what + " contains non-finite values");
  return t;
}

ordered_json stack_to_json(const std::string& name, const nn::MlpStack<float>& s) {
  ordered_json layers = ordered_json::array();
  for (const auto& l : s.layers()) {
    ordered_json lj;
    lj["fan_in"] = l.fan_in();
    lj["fan_out"] = l.fan_out();
    lj["activation"] = nn::to_string(l.activation);
    lj["weight"] = tensor_to_json(l.weight);
    lj["bias"] = tensor_to_json(l.bias);
    layers.push_back(std::move(lj));
  }
  return ordered_json{{"name", name}, {"layers", std::move(layers)}};
}

nn::MlpStack<float> stack_from_json(const json& j) {
  const std::string name = j.at("name").get<std::string>();
  std::vector<nn::DenseLayer<float>> layers;
  for (const auto& lj : j.at("layers")) {
    const auto in = lj.at("fan_in").get<Eigen::Index>();
    const auto out = lj.at("fan_out").get<Eigen::Index>();
    if (in < 1 || out < 1) throw ValidationError("checkpoint: layer widths must be positive in " + name);
    nn::DenseLayer<float> l;
    l.activation = nn::activation_from_string(lj.at("activation").get<std::string>());
    l.weight = tensor_from_json(lj.at("weight"), in, out, name + " weight");
    l.bias = tensor_from_json(lj.at("bias"), 1, out, name + " bias");
    layers.push_back(std::move(l));
  }
  if (layers.empty()) throw ValidationError("checkpoint: stack " + name + " has no layers");
  return nn::MlpStack<float>(std::move(layers));
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ordered_json to_json(const UniRiTConfig& c) {
  ordered_json j;
  j["n_iters"] = c.n_iters;
  j["alpha"] = c.alpha;
  j["encoder_widths"] = c.encoder_widths;
  j["rigid_decoder_widths"] = c.rigid_decoder_widths;
  j["deform_decoder_widths"] = c.deform_decoder_widths;
  j["rotation_param"] = to_string(c.rotation_param);
  j["pooling"] = nn::to_string(c.pooling);
  j["ablate_rigid"] = c.ablate_rigid;
  j["share_rigid_iters"] = c.share_rigid_iters;
  j["points_per_cloud"] = c.points_per_cloud;
  j["lr"] = c.lr;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

UniRiTConfig config_from_json(const json& j, UniRiTConfig c) {
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  static const std::vector<std::string> known{"n_iters",          "alpha",        "encoder_widths", "rigid_decoder_widths",
                                              "deform_decoder_widths", "rotation_param", "pooling", "ablate_rigid",
                                              "share_rigid_iters", "points_per_cloud", "lr", "epochs", "seed",
                                              "checkpoint_every"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError("config: unknown key '" + key + "'");
  try {
    read_field(j, "n_iters", c.n_iters);
    read_field(j, "alpha", c.alpha);
    read_field(j, "encoder_widths", c.encoder_widths);
    read_field(j, "rigid_decoder_widths", c.rigid_decoder_widths);
    read_field(j, "deform_decoder_widths", c.deform_decoder_widths);
    if (j.contains("rotation_param")) c.rotation_param = rotation_param_from_string(j.at("rotation_param").get<std::string>());
    if (j.contains("pooling")) c.pooling = nn::pooling_from_string(j.at("pooling").get<std::string>());
    read_field(j, "ablate_rigid", c.ablate_rigid);
    read_field(j, "share_rigid_iters", c.share_rigid_iters);
    read_field(j, "points_per_cloud", c.points_per_cloud);
    read_field(j, "lr", c.lr);
    read_field(j, "epochs", c.epochs);
    read_field(j, "seed", c.seed);
    read_field(j, "checkpoint_every", c.checkpoint_every);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ordered_json checkpoint_to_json(const UniRiTModel<float>& model, const nn::AdamState<float>* adam, int epoch) {
  ordered_json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["encoding"] = "base64 float32 little-endian, row-major";
  j["epoch"] = epoch;
  j["config"] = to_json(model.config());
  ordered_json stacks = ordered_json::array();
  for (const auto& [name, s] : model.stacks()) stacks.push_back(stack_to_json(name, *s));
  j["stacks"] = std::move(stacks);
  if (adam) {
    ordered_json a;
    a["step"] = adam->step;
    a["lr"] = adam->lr;
    a["beta1"] = adam->beta1;
    a["beta2"] = adam->beta2;
    a["eps"] = adam->eps;
    ordered_json m = ordered_json::array(), v = ordered_json::array();
    for (std::size_t k = 0; k < adam->m.size(); ++k) {
      m.push_back(tensor_to_json(adam->m[k]));
      v.push_back(tensor_to_json(adam->v[k]));
    }
    a["m"] = std::move(m);
    a["v"] = std::move(v);
    j["adam"] = std::move(a);
  }
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      throw ValidationError("checkpoint: unsupported format_version " + std::to_string(version));
    const UniRiTConfig config = config_from_json(j.at("config"));

    std::map<std::string, nn::MlpStack<float>> by_name;
    for (const auto& sj : j.at("stacks")) {
      const auto name = sj.at("name").get<std::string>();
      if (!by_name.emplace(name, stack_from_json(sj)).second)
        throw ValidationError("checkpoint: duplicate stack " + name);
    }
    auto take = [&](const std::string& name) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw ValidationError("checkpoint: missing stack " + name);
      auto s = std::move(it->second);
      by_name.erase(it);
      return s;
    };
    const int copies = config.share_rigid_iters ? 1 : config.n_iters;
    std::vector<nn::MlpStack<float>> rs, rt, rd;
    for (int i = 0; i < copies; ++i) {
      const std::string sfx = std::to_string(i);
      rs.push_back(take("rigid_src_encoder_" + sfx));
      rt.push_back(take("rigid_tgt_encoder_" + sfx));
      rd.push_back(take("rigid_decoder_" + sfx));
    }
    auto src2 = take("nonrigid_src_encoder");
    auto tgt2 = take("nonrigid_tgt_encoder");
    auto deform = take("deform_decoder");
    if (!by_name.empty()) throw ValidationError("checkpoint: unexpected stack " + by_name.begin()->first);

    Checkpoint out{UniRiTModel<float>(config, std::move(rs), std::move(rt), std::move(rd), std::move(src2),
                                      std::move(tgt2), std::move(deform)),
                   std::nullopt, j.value("epoch", 0)};
    if (j.contains("adam")) {
      const auto& a = j.at("adam");
      nn::AdamState<float> st;
      st.step = a.at("step").get<long>();
      st.lr = a.at("lr").get<double>();
      st.beta1 = a.at("beta1").get<double>();
      st.beta2 = a.at("beta2").get<double>();
      st.eps = a.at("eps").get<double>();
      const auto params = out.model.parameters();
      const auto& m = a.at("m");
      const auto& v = a.at("v");
      if (!m.empty() || !v.empty()) {
        if (m.size() != params.size() || v.size() != params.size())
          throw ValidationError("checkpoint: optimizer state does not match the parameters");
        for (std::size_t k = 0; k < params.size(); ++k) {
          st.m.push_back(tensor_from_json(m[k], params[k]->rows(), params[k]->cols(), "adam m"));
          st.v.push_back(tensor_from_json(v[k], params[k]->rows(), params[k]->cols(), "adam v"));
        }
      }
      out.adam = std::move(st);
    }
    return out;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const UniRiTModel<float>& model, const nn::AdamState<float>* adam,
                     int epoch) {
  write_json(path, checkpoint_to_json(model, adam, epoch));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_json(path)); }

json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace unirit
