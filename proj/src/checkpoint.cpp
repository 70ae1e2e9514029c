#include "dsq/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <type_traits>
#include <vector>

namespace dsq {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'Q', '1'};

template <class Real>
const char* dtype_name() {
  return std::is_same_v<Real, float> ? "f32" : "f64";
}

// Payloads are written little-endian regardless of host order. All supported
// hosts here are little-endian, so the raw copy below is the fast path; the
// static_assert keeps the assumption visible.
static_assert(sizeof(float) == 4 && sizeof(double) == 8);

template <class Real>
void save_impl(const ParamStore<Real>& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot open checkpoint for writing: " + path);
  f.write(kMagic, 4);
  f << '\n' << "params " << params.size() << '\n';
  for (const auto& [name, t] : params) {
    f << name << ' ' << dtype_name<Real>() << ' ';
    const auto& s = t.shape();
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) f << 'x';
      f << s[i];
    }
    f << '\n';
  }
  f << "payload\n";
  for (const auto& [name, t] : params)
    f.write(reinterpret_cast<const char*>(t.value().data()),
            std::streamsize(t.size() * sizeof(Real)));
  if (!f) throw ConfigError("failed writing checkpoint: " + path);
}

struct HeaderEntry {
  std::string name;
  std::string dtype;
  Shape shape;
};

std::vector<HeaderEntry> read_header(std::ifstream& f, const std::string& path) {
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw ConfigError("not a DSQ1 checkpoint: " + path);
  std::string line;
  std::getline(f, line);  // rest of magic line
  std::getline(f, line);
  std::istringstream hdr(line);
  std::string word;
  std::size_t count = 0;
  hdr >> word >> count;
  if (word != "params") throw ConfigError("malformed checkpoint header in " + path);
  std::vector<HeaderEntry> entries;
  entries.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(f, line)) throw ConfigError("truncated checkpoint header in " + path);
    std::istringstream ls(line);
    HeaderEntry e;
    std::string dims;
    ls >> e.name >> e.dtype >> dims;
    if (e.name.empty() || (e.dtype != "f32" && e.dtype != "f64"))
      throw ConfigError("malformed parameter line in " + path + ": " + line);
    std::size_t pos = 0;
    while (pos < dims.size()) {
      std::size_t next = dims.find('x', pos);
      if (next == std::string::npos) next = dims.size();
      e.shape.push_back(std::stoull(dims.substr(pos, next - pos)));
      pos = next + 1;
    }
    entries.push_back(std::move(e));
  }
  if (!std::getline(f, line) || line != "payload")
    throw ConfigError("missing payload marker in " + path);
  return entries;
}

}  // namespace

void save_checkpoint(const ParamStore<double>& params, const std::string& path) { save_impl(params, path); }
void save_checkpoint(const ParamStore<float>& params, const std::string& path) { save_impl(params, path); }

std::string checkpoint_dtype(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open checkpoint: " + path);
  auto entries = read_header(f, path);
  if (entries.empty()) throw ConfigError("checkpoint has no parameters: " + path);
  return entries[0].dtype;
}

template <class Real>
ParamStore<Real> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open checkpoint: " + path);
  auto entries = read_header(f, path);
  ParamStore<Real> out;
  for (const auto& e : entries) {
    if (e.dtype != dtype_name<Real>())
      throw ConfigError("checkpoint dtype " + e.dtype + " does not match requested width for " + e.name);
    Tensor<Real> t(e.shape);
    f.read(reinterpret_cast<char*>(t.value().data()), std::streamsize(t.size() * sizeof(Real)));
    if (!f) throw ConfigError("truncated payload for " + e.name + " in " + path);
    out.add(e.name, std::move(t));
  }
  return out;
}

template ParamStore<double> load_checkpoint<double>(const std::string&);
template ParamStore<float> load_checkpoint<float>(const std::string&);

}  // namespace dsq
