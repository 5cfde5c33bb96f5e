#include "odin/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace odin {

namespace {

using json = nlohmann::json;
constexpr char kMagic[8] = {'O', 'D', 'I', 'N', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void fill_uniform(T& t, double scale, Rng& rng) {
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-scale, scale);
}

template <typename T>
TensorView view(std::string name, T& t, ParamGroup group) {
  return {std::move(name), std::span<double>(t.data(), static_cast<std::size_t>(t.size())),
          t.rows(), t.cols(), group};
}

}  // namespace

void ModelDims::validate() const {
  if (vocab_size < 4) throw ConfigError("vocab_size must include the 4 special tokens");
  if (d < 1 || heads < 1) throw ConfigError("d and heads must be positive");
  if (d % heads != 0)
    throw ConfigError("model width d=" + std::to_string(d) + " is not divisible by heads=" +
                      std::to_string(heads));
  if (ffn < 1) throw ConfigError("ffn must be positive");
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
  if (depth < 1) throw ConfigError("depth must be >= 1");
  if (graph_stages < 0 || graph_stages >= depth)
    throw ConfigError("graph_stages must be in [0, depth)");
}

ParamSet ParamSet::init(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  ParamSet p;
  p.dims = dims;
  const int d = dims.d;
  // Uniform bounds sqrt(3 / fan_in) give each weight a standard deviation
  // of 1 / sqrt(fan_in).
  const double scale = std::sqrt(3.0 / static_cast<double>(d));
  const double ffn_scale = std::sqrt(3.0 / static_cast<double>(dims.ffn));
  Rng rng(mix_seed({seed, 0x1417ULL}));

  p.token_emb.resize(dims.vocab_size, d);
  p.pos_emb.resize(dims.max_len, d);
  fill_uniform(p.token_emb, scale, rng);
  fill_uniform(p.pos_emb, scale, rng);
  p.layers.resize(static_cast<std::size_t>(dims.depth));
  for (auto& l : p.layers) {
    for (Matrix* w : {&l.wq, &l.wk, &l.wv, &l.wo}) {
      w->resize(d, d);
      fill_uniform(*w, scale, rng);
    }
    for (Vector* b : {&l.bq, &l.bk, &l.bv, &l.bo}) *b = Vector::Zero(d);
    l.w_ff1.resize(d, dims.ffn);
    fill_uniform(l.w_ff1, scale, rng);
    l.b_ff1 = Vector::Zero(dims.ffn);
    l.w_ff2.resize(dims.ffn, d);
    fill_uniform(l.w_ff2, ffn_scale, rng);
    l.b_ff2 = Vector::Zero(d);
    l.ln1_gain = Vector::Ones(d);
    l.ln1_bias = Vector::Zero(d);
    l.ln2_gain = Vector::Ones(d);
    l.ln2_bias = Vector::Zero(d);
  }
  p.stages.resize(static_cast<std::size_t>(dims.graph_stages));
  for (auto& s : p.stages) {
    s.w1.resize(d, d);
    s.w2.resize(d, d);
    fill_uniform(s.w1, scale, rng);
    fill_uniform(s.w2, scale, rng);
  }
  if (!dims.tie_mlm) {
    p.mlm_head.resize(dims.vocab_size, d);
    fill_uniform(p.mlm_head, scale, rng);
  }
  return p;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet z = *this;
  z.set_zero();
  return z;
}

std::vector<TensorView> ParamSet::tensors() {
  std::vector<TensorView> out;
  out.push_back(view("token_emb", token_emb, ParamGroup::Encoder));
  out.push_back(view("pos_emb", pos_emb, ParamGroup::Encoder));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const auto pre = "layer" + std::to_string(i) + ".";
    out.push_back(view(pre + "wq", l.wq, ParamGroup::Encoder));
    out.push_back(view(pre + "wk", l.wk, ParamGroup::Encoder));
    out.push_back(view(pre + "wv", l.wv, ParamGroup::Encoder));
    out.push_back(view(pre + "wo", l.wo, ParamGroup::Encoder));
    out.push_back(view(pre + "bq", l.bq, ParamGroup::Encoder));
    out.push_back(view(pre + "bk", l.bk, ParamGroup::Encoder));
    out.push_back(view(pre + "bv", l.bv, ParamGroup::Encoder));
    out.push_back(view(pre + "bo", l.bo, ParamGroup::Encoder));
    out.push_back(view(pre + "w_ff1", l.w_ff1, ParamGroup::Encoder));
    out.push_back(view(pre + "b_ff1", l.b_ff1, ParamGroup::Encoder));
    out.push_back(view(pre + "w_ff2", l.w_ff2, ParamGroup::Encoder));
    out.push_back(view(pre + "b_ff2", l.b_ff2, ParamGroup::Encoder));
    out.push_back(view(pre + "ln1_gain", l.ln1_gain, ParamGroup::Encoder));
    out.push_back(view(pre + "ln1_bias", l.ln1_bias, ParamGroup::Encoder));
    out.push_back(view(pre + "ln2_gain", l.ln2_gain, ParamGroup::Encoder));
    out.push_back(view(pre + "ln2_bias", l.ln2_bias, ParamGroup::Encoder));
  }
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto pre = "stage" + std::to_string(i) + ".";
    out.push_back(view(pre + "w1", stages[i].w1, ParamGroup::Graph));
    out.push_back(view(pre + "w2", stages[i].w2, ParamGroup::Graph));
  }
  if (!dims.tie_mlm) out.push_back(view("mlm_head", mlm_head, ParamGroup::Encoder));
  return out;
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& t : const_cast<ParamSet*>(this)->tensors()) n += t.data.size();
  return n;
}

void ParamSet::set_zero() {
  for (auto& t : tensors()) std::fill(t.data.begin(), t.data.end(), 0.0);
}

bool ParamSet::all_finite() const {
  for (const auto& t : const_cast<ParamSet*>(this)->tensors()) {
    for (double x : t.data) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto params = ckpt.params;
  json manifest;
  const auto& dims = params.dims;
  manifest["dims"] = {{"vocab_size", dims.vocab_size}, {"d", dims.d},
                      {"heads", dims.heads},           {"ffn", dims.ffn},
                      {"max_len", dims.max_len},       {"depth", dims.depth},
                      {"graph_stages", dims.graph_stages}, {"tie_mlm", dims.tie_mlm}};
  json shapes = json::array();
  for (const auto& t : params.tensors()) shapes.push_back({t.name, t.rows, t.cols});
  manifest["tensors"] = shapes;
  json extra = json::array();
  for (const auto& m : ckpt.extra) extra.push_back({m.rows(), m.cols()});
  manifest["extra"] = extra;
  manifest["metadata"] = json::parse(ckpt.metadata_json);
  const auto header = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& t : params.tensors()) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size_bytes()));
  }
  for (const auto& m : ckpt.extra) {
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError(path.string() + " is not an odin checkpoint");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated checkpoint header in " + path.string());

  const auto manifest = json::parse(header);
  const auto& jd = manifest.at("dims");
  ModelDims dims;
  dims.vocab_size = jd.at("vocab_size");
  dims.d = jd.at("d");
  dims.heads = jd.at("heads");
  dims.ffn = jd.at("ffn");
  dims.max_len = jd.at("max_len");
  dims.depth = jd.at("depth");
  dims.graph_stages = jd.at("graph_stages");
  dims.tie_mlm = jd.at("tie_mlm");

  Checkpoint ckpt;
  ckpt.params = ParamSet::init(dims, 0);
  auto tensors = ckpt.params.tensors();
  const auto& shapes = manifest.at("tensors");
  if (shapes.size() != tensors.size()) throw DataError("checkpoint tensor manifest mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (shapes[i][0] != tensors[i].name || shapes[i][1] != tensors[i].rows ||
        shapes[i][2] != tensors[i].cols) {
      throw DataError("checkpoint shape mismatch at tensor " + tensors[i].name);
    }
    in.read(reinterpret_cast<char*>(tensors[i].data.data()),
            static_cast<std::streamsize>(tensors[i].data.size_bytes()));
  }
  for (const auto& shape : manifest.at("extra")) {
    Matrix m(shape[0].get<Eigen::Index>(), shape[1].get<Eigen::Index>());
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    ckpt.extra.push_back(std::move(m));
  }
  if (!in) throw DataError("truncated checkpoint payload in " + path.string());
  ckpt.metadata_json = manifest.at("metadata").dump();
  return ckpt;
}

}  // namespace odin
