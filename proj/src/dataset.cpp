#include "stpam/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace stpam::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr int kSchemaVersion = 1;
}

int Dataset::count_label(int z) const {
  int n = 0;
  for (int l : labels) n += l == z;
  return n;
}

void write_dataset(const Dataset& ds, const std::string& dir) {
  if (ds.x.size() != ds.labels.size()) throw UsageError("write_dataset: sample/label mismatch");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory: " + dir);

  json meta;
  meta["schema_version"] = kSchemaVersion;
  meta["channels"] = ds.channels;
  meta["t"] = ds.t;
  meta["fs"] = ds.fs;
  meta["channel_names"] = ds.channel_names;
  meta["label_names"] = ds.label_names;
  meta["samples"] = ds.size();
  meta["notes"] = ds.notes;
  {
    std::ofstream f(dir + "/meta.json");
    if (!f) throw IoError("cannot write " + dir + "/meta.json");
    f << meta.dump(2) << "\n";
  }
  {
    std::ofstream f(dir + "/data.bin", std::ios::binary);
    if (!f) throw IoError("cannot write " + dir + "/data.bin");
    std::vector<float> row(static_cast<std::size_t>(ds.channels) * ds.t);
    for (const auto& s : ds.x) {
      if (s.size() != row.size()) throw UsageError("write_dataset: sample extent mismatch");
      for (std::size_t i = 0; i < s.size(); ++i) row[i] = static_cast<float>(s[i]);
      f.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!f) throw IoError("dataset payload write failed");
  }
  {
    std::ofstream f(dir + "/labels.bin", std::ios::binary);
    if (!f) throw IoError("cannot write " + dir + "/labels.bin");
    for (int l : ds.labels) {
      if (l < 0 || l > 255) throw UsageError("write_dataset: label out of uint8 range");
      const unsigned char b = static_cast<unsigned char>(l);
      f.write(reinterpret_cast<const char*>(&b), 1);
    }
  }
}

Dataset read_dataset(const std::string& dir) {
  std::ifstream mf(dir + "/meta.json");
  if (!mf) throw IoError("cannot open " + dir + "/meta.json");
  json meta;
  try {
    mf >> meta;
  } catch (const json::exception& e) {
    throw FormatError("bad meta.json in " + dir + ": " + e.what());
  }
  if (!meta.contains("schema_version") || meta["schema_version"].get<int>() != kSchemaVersion)
    throw FormatError("unsupported dataset schema in " + dir);

  Dataset ds;
  ds.channels = meta.at("channels").get<int>();
  ds.t = meta.at("t").get<int>();
  ds.fs = meta.at("fs").get<double>();
  ds.channel_names = meta.at("channel_names").get<std::vector<std::string>>();
  ds.label_names = meta.at("label_names").get<std::vector<std::string>>();
  ds.notes = meta.value("notes", "");
  const int n = meta.at("samples").get<int>();
  if (ds.channels < 1 || ds.t < 1 || n < 0) throw FormatError("bad extents in meta.json");

  const std::size_t sample_elems = static_cast<std::size_t>(ds.channels) * ds.t;
  {
    std::ifstream f(dir + "/data.bin", std::ios::binary);
    if (!f) throw IoError("cannot open " + dir + "/data.bin");
    std::vector<float> row(sample_elems);
    ds.x.reserve(n);
    for (int i = 0; i < n; ++i) {
      f.read(reinterpret_cast<char*>(row.data()),
             static_cast<std::streamsize>(row.size() * sizeof(float)));
      if (!f) throw FormatError("data.bin truncated in " + dir);
      std::vector<double> s(sample_elems);
      for (std::size_t j = 0; j < sample_elems; ++j) s[j] = row[j];
      ds.x.push_back(std::move(s));
    }
  }
  {
    std::ifstream f(dir + "/labels.bin", std::ios::binary);
    if (!f) throw IoError("cannot open " + dir + "/labels.bin");
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i) {
      unsigned char b;
      f.read(reinterpret_cast<char*>(&b), 1);
      if (!f) throw FormatError("labels.bin truncated in " + dir);
      ds.labels[i] = b;
    }
  }
  return ds;
}

namespace {

Dataset like(const Dataset& ds) {
  Dataset out;
  out.channels = ds.channels;
  out.t = ds.t;
  out.fs = ds.fs;
  out.channel_names = ds.channel_names;
  out.label_names = ds.label_names;
  out.notes = ds.notes;
  return out;
}

void take(const Dataset& src, const std::vector<int>& idx, Dataset& dst) {
  for (int i : idx) {
    dst.x.push_back(src.x[i]);
    dst.labels.push_back(src.labels[i]);
  }
}

}  // namespace

Split split_stratified(const Dataset& ds, double train_frac, std::uint64_t seed) {
  if (train_frac <= 0.0 || train_frac >= 1.0)
    throw ConfigError("split_stratified: train fraction must be in (0, 1)");
  int max_label = -1;
  for (int l : ds.labels) max_label = std::max(max_label, l);

  std::vector<int> train_idx, test_idx;
  Rng rng(seed_mix(seed, 0x53504c49ull));
  for (int z = 0; z <= max_label; ++z) {
    std::vector<int> idx;
    for (int i = 0; i < ds.size(); ++i)
      if (ds.labels[i] == z) idx.push_back(i);
    if (idx.empty()) continue;
    for (std::size_t i = idx.size(); i > 1; --i)  // Fisher-Yates
      std::swap(idx[i - 1], idx[rng.below(i)]);
    std::size_t k = static_cast<std::size_t>(train_frac * static_cast<double>(idx.size()));
    if (k == 0) k = 1;
    if (k == idx.size()) k = idx.size() - 1;
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + k);
    test_idx.insert(test_idx.end(), idx.begin() + k, idx.end());
  }

  Split out{like(ds), like(ds)};
  take(ds, train_idx, out.train);
  take(ds, test_idx, out.test);
  return out;
}

Split split_head(const Dataset& ds, int n_head) {
  if (n_head < 0 || n_head > ds.size()) throw UsageError("split_head: bad head size");
  Split out{like(ds), like(ds)};
  for (int i = 0; i < ds.size(); ++i) {
    auto& dst = i < n_head ? out.train : out.test;
    dst.x.push_back(ds.x[i]);
    dst.labels.push_back(ds.labels[i]);
  }
  return out;
}

}  // namespace stpam::data
