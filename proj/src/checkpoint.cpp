#include "stpam/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace stpam::model {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'P', 'M'};
constexpr std::uint32_t kVersion = 1;

// Multi-byte values are written little-endian; this implementation targets
// little-endian hosts.
template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("checkpoint: truncated file");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > (1u << 20)) throw FormatError("checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw FormatError("checkpoint: truncated file");
  return s;
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path);
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);

  const ModelConfig& c = state.cfg;
  put<std::int32_t>(os, static_cast<std::int32_t>(c.variant));
  put<std::int32_t>(os, c.channels);
  put<std::int32_t>(os, c.t_window);
  put<std::int32_t>(os, c.m_slices);
  put<std::int32_t>(os, c.k_spatial);
  put<std::int32_t>(os, c.d_spatial);
  put<std::int32_t>(os, c.k_temporal);
  put<std::int32_t>(os, c.d_temporal);
  put<std::int32_t>(os, c.d_reduced);
  put<std::int32_t>(os, c.classes);
  put<double>(os, c.epsilon);
  put<double>(os, c.gamma);
  put<double>(os, c.sigma_scale);
  put<double>(os, c.sparsify);
  put<std::uint8_t>(os, c.fixed_lambda2 ? 1 : 0);
  put<std::uint8_t>(os, c.kl_extended ? 1 : 0);

  const auto& layout = *state.layout;
  put<std::uint32_t>(os, static_cast<std::uint32_t>(layout.size()));
  for (int i = 0; i < layout.size(); ++i) {
    put_string(os, layout.names[i]);
    for (int k = 0; k < 3; ++k) put<double>(os, layout.pos[i][k]);
  }

  const auto params = state.params();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put_string(os, p->name);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p->shape.size()));
    for (int e : p->shape) put<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic in " + path);
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));

  ModelConfig c;
  const auto variant = get<std::int32_t>(is);
  if (variant < 0 || variant > 2) throw FormatError("checkpoint: bad variant id");
  c.variant = static_cast<Variant>(variant);
  c.channels = get<std::int32_t>(is);
  c.t_window = get<std::int32_t>(is);
  c.m_slices = get<std::int32_t>(is);
  c.k_spatial = get<std::int32_t>(is);
  c.d_spatial = get<std::int32_t>(is);
  c.k_temporal = get<std::int32_t>(is);
  c.d_temporal = get<std::int32_t>(is);
  c.d_reduced = get<std::int32_t>(is);
  c.classes = get<std::int32_t>(is);
  c.epsilon = get<double>(is);
  c.gamma = get<double>(is);
  c.sigma_scale = get<double>(is);
  c.sparsify = get<double>(is);
  c.fixed_lambda2 = get<std::uint8_t>(is) != 0;
  c.kl_extended = get<std::uint8_t>(is) != 0;

  graph::ElectrodeLayout layout;
  const auto n_ch = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_ch; ++i) {
    layout.names.push_back(get_string(is));
    std::array<double, 3> p{};
    for (int k = 0; k < 3; ++k) p[k] = get<double>(is);
    layout.pos.push_back(p);
    layout.pos2d.push_back({0.0, 0.0});
  }
  // recompute the projection the same way the parser does
  {
    std::string text;
    for (std::uint32_t i = 0; i < n_ch; ++i) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s %.17g %.17g %.17g\n", layout.names[i].c_str(),
                    layout.pos[i][0], layout.pos[i][1], layout.pos[i][2]);
      text += buf;
    }
    layout = graph::layout_from_string(text);
  }

  ModelState state = ModelState::build(c, layout, 0);
  auto params = state.params();
  const auto n_params = get<std::uint32_t>(is);
  if (n_params != params.size())
    throw FormatError("checkpoint: parameter count mismatch (file " + std::to_string(n_params) +
                      ", model " + std::to_string(params.size()) + ")");
  for (auto* p : params) {
    const std::string name = get_string(is);
    if (name != p->name)
      throw FormatError("checkpoint: parameter order mismatch: expected '" + p->name + "', got '" +
                        name + "'");
    const auto rank = get<std::uint32_t>(is);
    if (rank != p->shape.size()) throw FormatError("checkpoint: rank mismatch for " + name);
    for (int e : p->shape) {
      if (get<std::uint32_t>(is) != static_cast<std::uint32_t>(e))
        throw FormatError("checkpoint: extent mismatch for " + name);
    }
    is.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!is) throw FormatError("checkpoint: truncated payload in " + name);
  }
  return state;
}

}  // namespace stpam::model
