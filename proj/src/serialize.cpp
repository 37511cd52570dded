#include "zen/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace zen {

namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor binary format assumes a little-endian host");

template <typename T>
void write_raw(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("tensor binary: truncated stream");
  return v;
}

}  // namespace

void write_array(std::ostream& os, const Array& a) {
  write_raw<std::uint32_t>(os, std::uint32_t(a.shape.size()));
  for (auto d : a.shape) write_raw<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(a.values.data()),
           std::streamsize(a.values.size() * sizeof(double)));
}

Array read_array(std::istream& is) {
  auto rank = read_raw<std::uint32_t>(is);
  if (rank > 8) throw std::runtime_error("tensor binary: implausible rank");
  std::vector<std::size_t> shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = std::size_t(read_raw<std::uint64_t>(is));
    n *= d;
  }
  std::vector<double> values(n);
  is.read(reinterpret_cast<char*>(values.data()), std::streamsize(n * sizeof(double)));
  if (!is) throw std::runtime_error("tensor binary: truncated values");
  return Array(std::move(shape), std::move(values));
}

void save_array(const std::string& path, const Array& a) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  write_array(f, a);
}

Array load_array(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for read: " + path);
  return read_array(f);
}

namespace {

nlohmann::json nest(const Array& a, std::size_t dim, std::size_t& cursor) {
  if (dim == a.shape.size() - 1 || a.shape.empty()) {
    nlohmann::json row = nlohmann::json::array();
    std::size_t n = a.shape.empty() ? a.values.size() : a.shape.back();
    for (std::size_t i = 0; i < n; ++i) row.push_back(a.values[cursor++]);
    return row;
  }
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < a.shape[dim]; ++i) out.push_back(nest(a, dim + 1, cursor));
  return out;
}

void flatten(const nlohmann::json& j, std::vector<double>& out) {
  if (j.is_array()) {
    for (const auto& e : j) flatten(e, out);
  } else {
    out.push_back(j.get<double>());
  }
}

}  // namespace

nlohmann::json array_to_json(const Array& a) {
  std::size_t cursor = 0;
  return {{"shape", a.shape}, {"data", nest(a, 0, cursor)}};
}

Array array_from_json(const nlohmann::json& j) {
  std::vector<std::size_t> shape = j.at("shape").get<std::vector<std::size_t>>();
  std::vector<double> values;
  flatten(j.at("data"), values);
  return Array(std::move(shape), std::move(values));
}

}  // namespace zen
