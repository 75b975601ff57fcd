#include "uatmc/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "uatmc/errors.hpp"

namespace uatmc::data {

namespace fs = std::filesystem;

InteractionTable InteractionTable::from_pairs(std::size_t users, std::size_t items,
                                              const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  InteractionTable t;
  t.num_users = users;
  t.num_items = items;
  t.train.assign(users, {});
  t.holdout.assign(users, std::nullopt);
  for (auto [u, i] : pairs) {
    if (u >= users || i >= items) {
      throw DataError("interaction (" + std::to_string(u) + ", " + std::to_string(i) + ") out of range");
    }
    t.train[u].push_back(i);
  }
  for (auto& items_of : t.train) {
    std::sort(items_of.begin(), items_of.end());
    items_of.erase(std::unique(items_of.begin(), items_of.end()), items_of.end());
  }
  return t;
}

bool InteractionTable::has_split() const {
  return std::any_of(holdout.begin(), holdout.end(), [](const auto& h) { return h.has_value(); });
}

bool InteractionTable::in_train(std::size_t u, std::size_t i) const {
  return std::binary_search(train[u].begin(), train[u].end(), i);
}

std::size_t InteractionTable::num_train() const {
  std::size_t n = 0;
  for (const auto& items_of : train) n += items_of.size();
  return n;
}

std::size_t InteractionTable::num_interactions() const {
  std::size_t n = num_train();
  for (const auto& h : holdout) n += h.has_value();
  return n;
}

std::vector<std::size_t> InteractionTable::item_counts() const {
  std::vector<std::size_t> c(num_items, 0);
  for (std::size_t u = 0; u < num_users; ++u) {
    for (std::size_t i : train[u]) ++c[i];
    if (holdout[u]) ++c[*holdout[u]];
  }
  return c;
}

std::vector<std::vector<std::size_t>> InteractionTable::item_users() const {
  std::vector<std::vector<std::size_t>> out(num_items);
  for (std::size_t u = 0; u < num_users; ++u) {
    for (std::size_t i : train[u]) out[i].push_back(u);
  }
  return out;
}

void InteractionTable::validate() const {
  if (train.size() != num_users || holdout.size() != num_users) {
    throw DataError("interaction table user count mismatch");
  }
  for (std::size_t u = 0; u < num_users; ++u) {
    const auto& items_of = train[u];
    for (std::size_t k = 0; k < items_of.size(); ++k) {
      if (items_of[k] >= num_items) throw DataError("item id out of range for user " + std::to_string(u));
      if (k > 0 && items_of[k] <= items_of[k - 1]) {
        throw DataError("training list of user " + std::to_string(u) + " is not strictly sorted");
      }
    }
    if (holdout[u]) {
      if (*holdout[u] >= num_items) throw DataError("holdout id out of range for user " + std::to_string(u));
      if (in_train(u, *holdout[u])) throw DataError("holdout of user " + std::to_string(u) + " is in training");
      if (items_of.empty()) throw DataError("user " + std::to_string(u) + " has a holdout but no training items");
    }
  }
}

const char* modality_name(Modality m) { return m == Modality::kVisual ? "v" : "t"; }

DatasetStats DatasetStats::from_counts(std::size_t users, std::size_t items, std::size_t interactions) {
  DatasetStats s;
  s.num_users = users;
  s.num_items = items;
  s.num_interactions = interactions;
  const double cells = static_cast<double>(users) * static_cast<double>(items);
  s.sparsity_pct = cells > 0 ? (1.0 - static_cast<double>(interactions) / cells) * 100.0 : 100.0;
  return s;
}

DatasetStats DatasetStats::of(const InteractionTable& t) {
  return from_counts(t.num_users, t.num_items, t.num_interactions());
}

namespace {

std::optional<std::size_t> parse_index(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

struct Densifier {
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> names;
  std::size_t operator()(const std::string& raw) {
    auto [it, inserted] = index.emplace(raw, names.size());
    if (inserted) names.push_back(raw);
    return it->second;
  }
};

}  // namespace

LoadedInteractions load_interactions(const fs::path& path, bool persist_id_maps) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interactions file " + path.string());

  std::vector<std::pair<std::string, std::string>> raw;
  std::string line;
  std::size_t line_no = 0;
  std::size_t declared_users = 0, declared_items = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = trim_cr(line);
    if (sv.empty()) continue;
    if (sv.front() == '#') {
      std::size_t du = 0, di = 0;
      if (std::sscanf(line.c_str(), "# users=%zu items=%zu", &du, &di) == 2) {
        declared_users = du;
        declared_items = di;
      }
      continue;
    }
    const auto tab = sv.find('\t');
    if (tab == std::string_view::npos || sv.find('\t', tab + 1) != std::string_view::npos || tab == 0 ||
        tab + 1 == sv.size()) {
      throw ParseError("expected `user<TAB>item` in " + path.string(), line_no);
    }
    raw.emplace_back(std::string(sv.substr(0, tab)), std::string(sv.substr(tab + 1)));
  }
  if (raw.empty()) throw DataError("empty dataset: " + path.string());

  bool numeric = true;
  for (const auto& [u, i] : raw) {
    if (!parse_index(u) || !parse_index(i)) {
      numeric = false;
      break;
    }
  }

  LoadedInteractions out;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(raw.size());
  if (numeric) {
    std::size_t users = declared_users, items = declared_items;
    for (const auto& [u, i] : raw) {
      pairs.emplace_back(*parse_index(u), *parse_index(i));
      users = std::max(users, pairs.back().first + 1);
      items = std::max(items, pairs.back().second + 1);
    }
    out.table = InteractionTable::from_pairs(users, items, pairs);
  } else {
    Densifier du, di;
    for (const auto& [u, i] : raw) pairs.emplace_back(du(u), di(i));
    out.table = InteractionTable::from_pairs(du.names.size(), di.names.size(), pairs);
    out.ids.users = std::move(du.names);
    out.ids.items = std::move(di.names);
    if (persist_id_maps) {
      save_id_map(fs::path(path.string() + ".users.tsv"), out.ids.users);
      save_id_map(fs::path(path.string() + ".items.tsv"), out.ids.items);
    }
  }
  return out;
}

void save_interactions(const fs::path& path, const InteractionTable& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# users=" << table.num_users << " items=" << table.num_items << "\n";
  for (std::size_t u = 0; u < table.num_users; ++u) {
    std::vector<std::size_t> all = table.train[u];
    if (table.holdout[u]) {
      all.insert(std::upper_bound(all.begin(), all.end(), *table.holdout[u]), *table.holdout[u]);
    }
    for (std::size_t i : all) out << u << '\t' << i << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

void save_id_map(const fs::path& path, const std::vector<std::string>& raw_ids) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write id map " + path.string());
  for (std::size_t k = 0; k < raw_ids.size(); ++k) out << raw_ids[k] << '\t' << k << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

namespace {

constexpr char kMagic[4] = {'M', 'M', 'F', 'E'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const fs::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated feature header in " + path.string());
  return v;
}

}  // namespace

FeatureMatrix load_features(const fs::path& path, Modality modality, std::optional<std::size_t> expected_rows) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("bad magic in feature file " + path.string());
  }
  const auto version = read_le<std::uint32_t>(in, path);
  if (version != kVersion) throw DataError("unsupported feature file version " + std::to_string(version));
  const auto rows = read_le<std::uint64_t>(in, path);
  const auto cols = read_le<std::uint64_t>(in, path);
  if (expected_rows && rows != *expected_rows) {
    throw DataError("feature file " + path.string() + " has " + std::to_string(rows) + " rows, dataset has " +
                    std::to_string(*expected_rows) + " items");
  }
  if (cols == 0) throw DataError("feature file " + path.string() + " has zero columns");
  FeatureMatrix fm;
  fm.modality = modality;
  fm.values = Tensor::zeros({rows, cols});
  auto v = fm.values.mutable_data();
  const auto bytes = static_cast<std::streamsize>(v.size() * sizeof(double));
  if (!in.read(reinterpret_cast<char*>(v.data()), bytes)) {
    throw DataError("truncated feature payload in " + path.string());
  }
  if (!fm.values.all_finite()) throw DataError("non-finite feature value in " + path.string());
  return fm;
}

void save_features(const fs::path& path, const FeatureMatrix& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint64_t>(out, features.rows());
  write_le<std::uint64_t>(out, features.cols());
  const auto v = features.values.data();
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!out) throw DataError("write failed for " + path.string());
}

InteractionTable split_leave_one_out(InteractionTable table, std::uint64_t seed) {
  Rng rng(seed);
  table.holdout.assign(table.num_users, std::nullopt);
  for (std::size_t u = 0; u < table.num_users; ++u) {
    auto& items_of = table.train[u];
    if (items_of.size() < 2) continue;
    std::uniform_int_distribution<std::size_t> pick(0, items_of.size() - 1);
    const std::size_t k = pick(rng);
    table.holdout[u] = items_of[k];
    items_of.erase(items_of.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return table;
}

TripleSampler::TripleSampler(const InteractionTable& table, std::uint64_t seed) : table_(table), rng_(seed) {
  for (std::size_t u = 0; u < table.num_users; ++u) {
    const std::size_t n = table.train[u].size();
    if (n > 0 && n < table.num_items) users_.push_back(u);
  }
}

std::vector<Triple> TripleSampler::sample(std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("batch_size must be >= 1");
  if (users_.empty()) throw DataError("no user has both a training item and a non-interacted item");
  std::uniform_int_distribution<std::size_t> pick_user(0, users_.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_item(0, table_.num_items - 1);
  std::vector<Triple> out;
  out.reserve(batch_size);
  while (out.size() < batch_size) {
    const std::size_t u = users_[pick_user(rng_)];
    const auto& items_of = table_.train[u];
    std::uniform_int_distribution<std::size_t> pick_pos(0, items_of.size() - 1);
    const std::size_t pos = items_of[pick_pos(rng_)];
    std::size_t neg = pick_item(rng_);
    while (table_.in_train(u, neg)) neg = pick_item(rng_);
    out.push_back({u, pos, neg});
  }
  return out;
}

}  // namespace uatmc::data
