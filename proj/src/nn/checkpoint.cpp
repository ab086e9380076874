#include "pmr/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "pmr/error.hpp"

namespace pmr::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'M', 'R', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ValidationError("checkpoint is truncated");
  return v;
}

}  // namespace

void Archive::put_network(const std::string& name, const Network& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& L : net.layers()) layers.push_back({L.in, L.out, static_cast<int>(L.act)});
  meta["networks"][name] = layers;
  arrays[name + "/params"].assign(net.parameters().begin(), net.parameters().end());
}

bool Archive::has_network(const std::string& name) const {
  return meta.contains("networks") && meta["networks"].contains(name);
}

Network Archive::get_network(const std::string& name) const {
  if (!has_network(name)) throw ValidationError("checkpoint has no network '" + name + "'");
  std::vector<LayerShape> shapes;
  for (const auto& l : meta["networks"][name]) {
    const int act = l.at(2).get<int>();
    if (act != 0 && act != 1) throw ValidationError("checkpoint: unknown activation kind");
    shapes.push_back({l.at(0).get<std::size_t>(), l.at(1).get<std::size_t>(), static_cast<Activation>(act)});
  }
  Network net(std::move(shapes));
  const auto& p = array(name + "/params");
  if (p.size() != net.parameter_count()) throw ValidationError("checkpoint: parameter count mismatch for " + name);
  std::copy(p.begin(), p.end(), net.parameters().begin());
  return net;
}

void Archive::put_adam(const std::string& name, const Adam& opt) {
  const auto& c = opt.config();
  meta["optimizers"][name] = {{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps},
                              {"steps", opt.steps()}};
  arrays[name + "/m"] = opt.first_moment();
  arrays[name + "/v"] = opt.second_moment();
}

Adam Archive::get_adam(const std::string& name) const {
  if (!meta.contains("optimizers") || !meta["optimizers"].contains(name)) {
    throw ValidationError("checkpoint has no optimizer '" + name + "'");
  }
  const auto& j = meta["optimizers"][name];
  AdamConfig c{j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
               j.at("eps").get<double>()};
  const auto& m = array(name + "/m");
  Adam opt(m.size(), c);
  opt.restore(j.at("steps").get<std::size_t>(), m, array(name + "/v"));
  return opt;
}

const std::vector<double>& Archive::array(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw ValidationError("checkpoint has no array '" + name + "'");
  return it->second;
}

void Archive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  const std::string js = meta.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(js.size()));
  out.write(js.data(), static_cast<std::streamsize>(js.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, values] : arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, values.size());
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 8));
  }
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("'" + path.string() + "' is not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  Archive a;
  const auto js_len = get<std::uint32_t>(in);
  std::string js(js_len, '\0');
  in.read(js.data(), js_len);
  if (!in) throw ValidationError("checkpoint is truncated");
  a.meta = nlohmann::json::parse(js);
  const auto n = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto name_len = get<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto count = get<std::uint64_t>(in);
    std::vector<double> values(count);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * 8));
    if (!in) throw ValidationError("checkpoint is truncated");
    a.arrays.emplace(std::move(name), std::move(values));
  }
  return a;
}

}  // namespace pmr::nn
