#include "uatmc/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "uatmc/errors.hpp"
#include "uatmc/kernels.hpp"
#include "uatmc/rng.hpp"

namespace uatmc::model {

namespace {

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> options, const char* what) {
  for (const auto& [n, v] : options) {
    if (s == n) return v;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

}  // namespace

Kind parse_kind(const std::string& s) {
  return parse_enum<Kind>(s, {{"concat", Kind::kConcat}, {"graph", Kind::kGraph}}, "model kind");
}
Fusion parse_fusion(const std::string& s) {
  return parse_enum<Fusion>(s, {{"identity", Fusion::kIdentity}, {"tanh", Fusion::kTanh}}, "fusion");
}
UserMode parse_user_mode(const std::string& s) {
  return parse_enum<UserMode>(s, {{"shared", UserMode::kShared}, {"id_only", UserMode::kIdOnly}}, "user mode");
}
const char* name(Kind k) { return k == Kind::kConcat ? "concat" : "graph"; }
const char* name(Fusion f) { return f == Fusion::kIdentity ? "identity" : "tanh"; }
const char* name(UserMode m) { return m == UserMode::kShared ? "shared" : "id_only"; }

std::vector<std::pair<std::string, Tensor*>> ModelParams::blocks() {
  std::vector<std::pair<std::string, Tensor*>> b{
      {"user_emb", &user_emb}, {"item_emb", &item_emb}, {"proj_v", &proj_v}, {"proj_t", &proj_t}};
  if (config.user_mode == UserMode::kIdOnly) b.emplace_back("user_content", &user_content);
  return b;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::blocks() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [n, t] : const_cast<ModelParams*>(this)->blocks()) out.emplace_back(n, t);
  return out;
}

void ModelParams::validate() const {
  const std::size_t d = config.dim, f = config.fuse_dim;
  if (user_emb.rank() != 2 || user_emb.cols() != d) throw DimensionError("user_emb width must equal dim");
  if (item_emb.rank() != 2 || item_emb.cols() != d) throw DimensionError("item_emb width must equal dim");
  if (proj_v.rank() != 2 || proj_v.rows() != f) throw DimensionError("proj_v must have fuse_dim rows");
  if (proj_t.rank() != 2 || proj_t.rows() != f) throw DimensionError("proj_t must have fuse_dim rows");
  if (config.user_mode == UserMode::kIdOnly &&
      (user_content.rank() != 2 || user_content.rows() != num_users() || user_content.cols() != 2 * f)) {
    throw DimensionError("user_content must be users x 2*fuse_dim");
  }
  for (const auto& [n, t] : blocks()) {
    if (!t->all_finite()) throw NumericalError("non-finite value in parameter block " + n);
  }
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  const auto ba = a.blocks(), bb = b.blocks();
  if (ba.size() != bb.size() || a.config.kind != b.config.kind || a.config.fusion != b.config.fusion) return false;
  for (std::size_t k = 0; k < ba.size(); ++k) {
    if (ba[k].first != bb[k].first || !(*ba[k].second == *bb[k].second)) return false;
  }
  return true;
}

ModelParams init_params(const ModelConfig& config, std::size_t users, std::size_t items, std::size_t d_v,
                        std::size_t d_t, std::uint64_t seed) {
  if (config.dim == 0 || config.fuse_dim == 0) throw ConfigError("model dims must be positive");
  if (config.init_std < 0) throw ConfigError("init_std must be non-negative");
  ModelParams p;
  p.config = config;
  Rng rng = make_rng(seed, "model.init");
  std::normal_distribution<double> n(0.0, config.init_std);
  auto gaussian = [&](std::size_t r, std::size_t c) {
    Tensor t = Tensor::zeros({r, c});
    for (double& v : t.mutable_data()) v = config.init_std > 0 ? n(rng) : 0.0;
    return t;
  };
  p.user_emb = gaussian(users, config.dim);
  p.item_emb = gaussian(items, config.dim);
  p.proj_v = gaussian(config.fuse_dim, d_v);
  p.proj_t = gaussian(config.fuse_dim, d_t);
  if (config.user_mode == UserMode::kIdOnly) p.user_content = gaussian(users, 2 * config.fuse_dim);
  return p;
}

// ---- content ---------------------------------------------------------------

namespace {

Tensor propagate_items(const Tensor& x, const Tensor& user_mean, const std::vector<std::vector<std::size_t>>& seen,
                       const std::vector<std::vector<std::size_t>>& item_users) {
  const std::size_t items = x.rows(), d = x.cols();
  kernels::Csr a;
  a.rows = items;
  a.cols = seen.size();
  for (std::size_t i = 0; i < items; ++i) {
    const double di = static_cast<double>(item_users[i].size()) + 1.0;
    for (std::size_t u : item_users[i]) {
      a.indices.push_back(u);
      a.values.push_back(1.0 / std::sqrt(di * (static_cast<double>(seen[u].size()) + 1.0)));
    }
    a.indptr.push_back(a.indices.size());
  }
  Tensor out = Tensor::zeros({items, d});
  kernels::spmm(a, user_mean.data(), d, out.mutable_data());
  for (std::size_t i = 0; i < items; ++i) {
    const double di = static_cast<double>(item_users[i].size()) + 1.0;
    for (std::size_t c = 0; c < d; ++c) out.at(i, c) += x.at(i, c) / di;
  }
  return out;
}

Tensor user_means(const Tensor& x, const std::vector<std::vector<std::size_t>>& seen) {
  kernels::Csr a;
  a.rows = seen.size();
  a.cols = x.rows();
  for (const auto& items_of : seen) {
    for (std::size_t i : items_of) {
      a.indices.push_back(i);
      a.values.push_back(1.0 / static_cast<double>(items_of.size()));
    }
    a.indptr.push_back(a.indices.size());
  }
  Tensor out = Tensor::zeros({seen.size(), x.cols()});
  kernels::spmm(a, x.data(), x.cols(), out.mutable_data());
  return out;
}

Tensor propagate_users(const Tensor& x, const Tensor& user_mean, const std::vector<std::vector<std::size_t>>& seen,
                       const std::vector<std::vector<std::size_t>>& item_users) {
  const std::size_t users = seen.size(), d = x.cols();
  kernels::Csr a;
  a.rows = users;
  a.cols = x.rows();
  for (const auto& items_of : seen) {
    const double du = static_cast<double>(items_of.size()) + 1.0;
    for (std::size_t i : items_of) {
      a.indices.push_back(i);
      a.values.push_back(1.0 / std::sqrt(du * (static_cast<double>(item_users[i].size()) + 1.0)));
    }
    a.indptr.push_back(a.indices.size());
  }
  Tensor out = Tensor::zeros({users, d});
  kernels::spmm(a, x.data(), d, out.mutable_data());
  for (std::size_t u = 0; u < users; ++u) {
    const double du = static_cast<double>(seen[u].size()) + 1.0;
    for (std::size_t c = 0; c < d; ++c) out.at(u, c) += user_mean.at(u, c) / du;
  }
  return out;
}

std::vector<double> row_norms(const Tensor& x) {
  std::vector<double> n(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) n[i] = l2_norm(x.row(i));
  return n;
}

}  // namespace

std::shared_ptr<const Content> build_content(Kind kind, const data::InteractionTable& train,
                                             const data::FeatureMatrix& visual, const data::FeatureMatrix& textual) {
  if (visual.rows() != train.num_items || textual.rows() != train.num_items) {
    throw DimensionError("feature rows must equal the item count");
  }
  auto c = std::make_shared<Content>();
  c->kind = kind;
  c->seen = train.train;
  c->raw_norm_v = row_norms(visual.values);
  c->raw_norm_t = row_norms(textual.values);
  const Tensor mean_v = user_means(visual.values, c->seen);
  const Tensor mean_t = user_means(textual.values, c->seen);
  c->gain.assign(train.num_items, 1.0);
  if (kind == Kind::kConcat) {
    c->item_v = visual.values;
    c->item_t = textual.values;
    c->user_v = mean_v;
    c->user_t = mean_t;
    return c;
  }
  const auto item_users = train.item_users();
  c->item_v = propagate_items(visual.values, mean_v, c->seen, item_users);
  c->item_t = propagate_items(textual.values, mean_t, c->seen, item_users);
  c->user_v = propagate_users(visual.values, mean_v, c->seen, item_users);
  c->user_t = propagate_users(textual.values, mean_t, c->seen, item_users);
  // Own-feature path: self-loop plus the route through each neighbour's mean.
  for (std::size_t i = 0; i < train.num_items; ++i) {
    const double di = static_cast<double>(item_users[i].size()) + 1.0;
    double g = 1.0 / di;
    for (std::size_t u : item_users[i]) {
      const double du = static_cast<double>(c->seen[u].size());
      g += (1.0 / du) / std::sqrt(di * (du + 1.0));
    }
    c->gain[i] = g;
  }
  return c;
}

// ---- tape encoding ---------------------------------------------------------

std::vector<ad::Var> ParamVars::trainable() const {
  std::vector<ad::Var> v{user_emb, item_emb, proj_v, proj_t};
  if (user_content.valid()) v.push_back(user_content);
  return v;
}

ParamVars bind(ad::Tape& tape, const ModelParams& params, bool trainable) {
  auto put = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
  ParamVars p;
  p.user_emb = put(params.user_emb);
  p.item_emb = put(params.item_emb);
  p.proj_v = put(params.proj_v);
  p.proj_t = put(params.proj_t);
  if (params.config.user_mode == UserMode::kIdOnly) p.user_content = put(params.user_content);
  return p;
}

namespace {

Tensor gather_plain(const Tensor& t, const std::vector<std::size_t>& idx) {
  const std::size_t d = t.cols();
  Tensor out = Tensor::zeros({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(t.row(idx[r]).data(), d, out.mutable_row(r).data());
  }
  return out;
}

ad::Var fuse(const ad::Var& z, Fusion f) { return f == Fusion::kTanh ? ad::tanh(z) : z; }

double fuse(double z, Fusion f) { return f == Fusion::kTanh ? std::tanh(z) : z; }

ad::Var perturbed(ad::Tape& tape, const Tensor& base, const Content& content, const std::vector<std::size_t>& items,
                  const ad::Var& delta, std::size_t d) {
  ad::Var x = tape.constant(gather_plain(base, items));
  if (!delta.valid()) return x;
  if (delta.value().rank() != 2 || delta.shape()[0] != items.size() || delta.shape()[1] != d) {
    throw DimensionError("perturbation shape " + shape_str(delta.shape()) + " does not match " +
                         std::to_string(items.size()) + " x " + std::to_string(d));
  }
  std::vector<double> g(items.size());
  for (std::size_t r = 0; r < items.size(); ++r) g[r] = content.gain[items[r]];
  return ad::add(x, ad::scale_rows(delta, tape.constant(Tensor::vector(std::move(g)))));
}

}  // namespace

ad::Var encode_items(const ParamVars& p, const ModelParams& params, const Content& content,
                     const std::vector<std::size_t>& items, const SlotDelta* delta) {
  ad::Tape& tape = p.item_emb.tape();
  const Fusion f = params.config.fusion;
  ad::Var e = ad::gather_rows(p.item_emb, items);
  ad::Var xv = perturbed(tape, content.item_v, content, items, delta ? delta->v : ad::Var{}, params.dim_v());
  ad::Var xt = perturbed(tape, content.item_t, content, items, delta ? delta->t : ad::Var{}, params.dim_t());
  ad::Var zv = fuse(ad::matmul(xv, p.proj_v, false, true), f);
  ad::Var zt = fuse(ad::matmul(xt, p.proj_t, false, true), f);
  return ad::concat({e, zv, zt});
}

ad::Var encode_users(const ParamVars& p, const ModelParams& params, const Content& content,
                     const std::vector<std::size_t>& users) {
  ad::Tape& tape = p.user_emb.tape();
  ad::Var e = ad::gather_rows(p.user_emb, users);
  if (params.config.user_mode == UserMode::kIdOnly) {
    return ad::concat({e, ad::gather_rows(p.user_content, users)});
  }
  const Fusion f = params.config.fusion;
  ad::Var zv = fuse(ad::matmul(tape.constant(gather_plain(content.user_v, users)), p.proj_v, false, true), f);
  ad::Var zt = fuse(ad::matmul(tape.constant(gather_plain(content.user_t, users)), p.proj_t, false, true), f);
  return ad::concat({e, zv, zt});
}

EncodedTriple encode(const ParamVars& p, const ModelParams& params, const Content& content,
                     const std::vector<data::Triple>& triples, const SlotDelta* plus, const SlotDelta* minus) {
  std::vector<std::size_t> u, ip, in;
  for (const auto& t : triples) {
    if (t.user >= params.num_users() || t.pos >= params.num_items() || t.neg >= params.num_items()) {
      throw DimensionError("triple id out of range");
    }
    u.push_back(t.user);
    ip.push_back(t.pos);
    in.push_back(t.neg);
  }
  return {encode_users(p, params, content, u), encode_items(p, params, content, ip, plus),
          encode_items(p, params, content, in, minus)};
}

// ---- plain evaluation ------------------------------------------------------

double score(std::span<const double> h_u, std::span<const double> h_i) {
  if (h_u.size() != h_i.size()) {
    throw DimensionError("score: widths " + std::to_string(h_u.size()) + " and " + std::to_string(h_i.size()));
  }
  return dot(h_u, h_i);
}

namespace {

void project_into(const Tensor& proj, std::span<const double> x, Fusion f, double* out) {
  const std::size_t rows = proj.rows(), cols = proj.cols();
  for (std::size_t j = 0; j < rows; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < cols; ++k) s += x[k] * proj.at(j, k);
    out[j] = fuse(s, f);
  }
}

}  // namespace

std::vector<double> fused_item(const ModelParams& params, const Content& content, std::size_t item,
                               std::span<const double> delta_v, std::span<const double> delta_t) {
  const std::size_t d = params.config.dim, f = params.config.fuse_dim;
  if ((!delta_v.empty() && delta_v.size() != params.dim_v()) ||
      (!delta_t.empty() && delta_t.size() != params.dim_t())) {
    throw DimensionError("perturbation width does not match feature width");
  }
  std::vector<double> h(params.fused_dim());
  std::copy_n(params.item_emb.row(item).data(), d, h.data());
  const double g = content.gain[item];
  auto apply = [&](const Tensor& base, std::span<const double> delta) {
    std::vector<double> x(base.row(item).begin(), base.row(item).end());
    for (std::size_t k = 0; k < delta.size(); ++k) x[k] = x[k] + g * delta[k];
    return x;
  };
  project_into(params.proj_v, apply(content.item_v, delta_v), params.config.fusion, h.data() + d);
  project_into(params.proj_t, apply(content.item_t, delta_t), params.config.fusion, h.data() + d + f);
  return h;
}

Tensor fused_items(const ModelParams& params, const Content& content) {
  const std::size_t n = params.num_items(), w = params.fused_dim();
  Tensor out = Tensor::zeros({n, w});
#pragma omp parallel for schedule(static) if (n * w > 4096)
  for (std::size_t i = 0; i < n; ++i) {
    auto h = fused_item(params, content, i);
    std::copy(h.begin(), h.end(), out.mutable_row(i).begin());
  }
  return out;
}

Tensor fused_users(const ModelParams& params, const Content& content) {
  const std::size_t n = params.num_users(), w = params.fused_dim();
  const std::size_t d = params.config.dim, f = params.config.fuse_dim;
  Tensor out = Tensor::zeros({n, w});
#pragma omp parallel for schedule(static) if (n * w > 4096)
  for (std::size_t u = 0; u < n; ++u) {
    double* h = out.mutable_row(u).data();
    std::copy_n(params.user_emb.row(u).data(), d, h);
    if (params.config.user_mode == UserMode::kIdOnly) {
      std::copy_n(params.user_content.row(u).data(), 2 * f, h + d);
    } else {
      project_into(params.proj_v, content.user_v.row(u), params.config.fusion, h + d);
      project_into(params.proj_t, content.user_t.row(u), params.config.fusion, h + d + f);
    }
  }
  return out;
}

Tensor score_matrix(const Tensor& users, const Tensor& items) {
  if (users.cols() != items.cols()) throw DimensionError("score_matrix: embedding widths differ");
  Tensor out = Tensor::zeros({users.rows(), items.rows()});
  kernels::gemm(false, true, users.rows(), items.rows(), users.cols(), users.data(), items.data(),
                out.mutable_data());
  return out;
}

std::vector<double> rank_all(const ModelParams& params, const Content& content, std::size_t user,
                             const std::vector<ItemOverride>& overrides, bool exclude_seen) {
  if (user >= params.num_users()) throw DimensionError("rank_all: user out of range");
  const Tensor hu = fused_users(params, content);
  const auto h_u = hu.row(user);
  std::vector<double> s(params.num_items());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = score(h_u, fused_item(params, content, i));
  for (const auto& o : overrides) s[o.item] = score(h_u, fused_item(params, content, o.item, o.delta_v, o.delta_t));
  if (exclude_seen) {
    for (std::size_t i : content.seen[user]) s[i] = kSeenSentinel;
  }
  return s;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'U', 'A', 'T', 'M'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& v) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

void put_block(std::ostream& out, const std::string& name, const Tensor& t) {
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint64_t>(out, t.rows());
  put<std::uint64_t>(out, t.cols());
  out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const ModelParams& p = ckpt.params;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kCkptMagic, 4);
  put<std::uint32_t>(out, kCkptVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(p.config.kind));
  put_block(out, "config",
            Tensor::matrix(1, 4,
                           {static_cast<double>(p.config.fusion), static_cast<double>(p.config.user_mode),
                            static_cast<double>(p.config.dim), static_cast<double>(p.config.fuse_dim)}));
  put_block(out, "epochs", Tensor::matrix(1, 1, {static_cast<double>(ckpt.epochs_completed)}));
  put_block(out, "training", Tensor::matrix(1, 4, std::vector<double>(ckpt.training.begin(), ckpt.training.end())));
  for (const auto& [n, t] : p.blocks()) put_block(out, n, *t);
  if (!out) throw DataError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCkptMagic, 4) != 0) throw DataError("bad checkpoint magic");
  std::uint32_t version = 0;
  std::uint8_t kind = 0;
  if (!get(in, version) || version != kCkptVersion) throw DataError("unsupported checkpoint version");
  if (!get(in, kind) || kind > 1) throw DataError("bad model kind in checkpoint");
  Checkpoint ck;
  ck.params.config.kind = static_cast<Kind>(kind);
  bool have_config = false;
  std::uint16_t len = 0;
  while (get(in, len)) {
    std::string name(len, '\0');
    std::uint64_t rows = 0, cols = 0;
    if (!in.read(name.data(), len) || !get(in, rows) || !get(in, cols)) throw DataError("truncated checkpoint");
    Tensor t = Tensor::zeros({rows, cols});
    auto v = t.mutable_data();
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
      throw DataError("truncated checkpoint block " + name);
    }
    if (name == "config") {
      if (t.size() != 4) throw DataError("bad config block");
      ck.params.config.fusion = static_cast<Fusion>(static_cast<int>(t[0]));
      ck.params.config.user_mode = static_cast<UserMode>(static_cast<int>(t[1]));
      ck.params.config.dim = static_cast<std::size_t>(t[2]);
      ck.params.config.fuse_dim = static_cast<std::size_t>(t[3]);
      have_config = true;
    } else if (name == "epochs") {
      ck.epochs_completed = static_cast<std::size_t>(t.item());
    } else if (name == "training") {
      if (t.size() != 4) throw DataError("bad training block");
      std::copy(t.data().begin(), t.data().end(), ck.training.begin());
    } else if (name == "user_emb") {
      ck.params.user_emb = std::move(t);
    } else if (name == "item_emb") {
      ck.params.item_emb = std::move(t);
    } else if (name == "proj_v") {
      ck.params.proj_v = std::move(t);
    } else if (name == "proj_t") {
      ck.params.proj_t = std::move(t);
    } else if (name == "user_content") {
      ck.params.user_content = std::move(t);
    } else {
      throw DataError("unknown checkpoint block " + name);
    }
  }
  if (!have_config) throw DataError("checkpoint lacks a config block");
  ck.params.validate();
  return ck;
}

}  // namespace uatmc::model
