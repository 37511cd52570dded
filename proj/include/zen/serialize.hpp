#pragma once

#include <iosfwd>
#include <string>

#include "json.hpp"
#include "zen/tensor.hpp"

namespace zen {

// Binary tensor layout: u32 rank, u64 dims[rank], then f64 values, all
// little-endian.
void write_array(std::ostream& os, const Array& a);
Array read_array(std::istream& is);

void save_array(const std::string& path, const Array& a);
Array load_array(const std::string& path);

// JSON form: {"shape": [...], "data": <nested arrays>} for test fixtures.
nlohmann::json array_to_json(const Array& a);
Array array_from_json(const nlohmann::json& j);

}  // namespace zen
