#include "moco/vq.hpp"

#include <stdexcept>

#include "json.hpp"

namespace moco::vq {

std::string level_name(Level l) { return l == Level::Top ? "top" : "bottom"; }

Level level_from_name(const std::string& s) {
  if (s == "top") return Level::Top;
  if (s == "bottom") return Level::Bottom;
  throw std::invalid_argument("unknown codebook level: " + s);
}

void CodeGrid::validate() const {
  if (h < 1 || w < 1 || indices.size() != static_cast<size_t>(h) * w)
    throw std::invalid_argument("code grid: index count does not match h*w");
  for (int idx : indices)
    if (idx < 0 || idx >= K) throw std::invalid_argument("code grid: index out of [0, K)");
}

std::string grid_to_json(const CodeGrid& g) {
  g.validate();
  nlohmann::json j;
  j["level"] = level_name(g.level);
  j["k"] = g.K;
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < g.h; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < g.w; ++c) row.push_back(g.at(r, c));
    rows.push_back(std::move(row));
  }
  j["indices"] = std::move(rows);
  return j.dump(2);
}

CodeGrid grid_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  CodeGrid g;
  g.level = level_from_name(j.at("level").get<std::string>());
  g.K = j.at("k").get<int>();
  const auto& rows = j.at("indices");
  g.h = static_cast<int>(rows.size());
  g.w = g.h > 0 ? static_cast<int>(rows[0].size()) : 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != g.w)
      throw std::invalid_argument("code grid json: ragged rows");
    for (const auto& e : row) g.indices.push_back(e.get<int>());
  }
  g.validate();
  return g;
}

}  // namespace moco::vq
