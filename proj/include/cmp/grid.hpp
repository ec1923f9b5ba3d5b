#pragma once

#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cmp/mat.hpp"
#include "cmp/rng.hpp"

namespace cmp {

// Intents: stay plus the four axis moves. Slip replaces the intended move by a
// uniformly random neighbor direction; moves into a wall leave the cell as-is.
enum GridIntent { kStay = 0, kUp = 1, kDown = 2, kLeft = 3, kRight = 4 };
constexpr int kNumIntents = 5;

struct GridSpec {
  int width = 5;
  int height = 5;
  std::set<int> hazards;  // cell ids, id = y * width + x
  double p_slip = 0.1;
  int horizon = 50;

  int cells() const { return width * height; }
  int cell_id(int x, int y) const { return y * width + x; }
  bool hazard(int cell) const { return hazards.count(cell) > 0; }
  bool safe(int cell) const { return !hazard(cell); }

  void validate() const {
    if (width < 1 || height < 1) throw std::invalid_argument("grid: empty board");
    if (!(p_slip >= 0.0 && p_slip < 1.0)) throw std::invalid_argument("grid: p_slip outside [0,1)");
    for (int h : hazards)
      if (h < 0 || h >= cells()) throw std::invalid_argument("grid: hazard outside board");
  }
};

// Default board used by the oracle checks. Hazards at (1,0) and (0,1) box in
// the origin corner — a cell that cannot be left safely and bleeds value at
// every step — while the interior hazard adds mild risk along escape routes.
// This yields a wide spread of horizon-50 values on both sides of 0.5.
inline GridSpec default_grid() {
  GridSpec g;
  g.width = 5;
  g.height = 5;
  g.p_slip = 0.1;
  g.horizon = 50;
  g.hazards = {g.cell_id(1, 0), g.cell_id(0, 1), g.cell_id(3, 3)};
  return g;
}

inline int clamp_move(const GridSpec& g, int cell, int intent) {
  int x = cell % g.width;
  int y = cell / g.width;
  switch (intent) {
    case kStay: break;
    case kUp: y = y > 0 ? y - 1 : y; break;
    case kDown: y = y < g.height - 1 ? y + 1 : y; break;
    case kLeft: x = x > 0 ? x - 1 : x; break;
    case kRight: x = x < g.width - 1 ? x + 1 : x; break;
    default: throw std::invalid_argument("grid: unknown intent");
  }
  return g.cell_id(x, y);
}

struct GridStep {
  int next = 0;
  bool safe = true;
};

inline GridStep grid_step(const GridSpec& g, int cell, int intent, Rng& rng) {
  if (cell < 0 || cell >= g.cells()) throw std::invalid_argument("grid: cell outside board");
  int next;
  if (rng.u01() < g.p_slip) {
    const int dir = 1 + static_cast<int>(rng.uniform_int(4));
    next = clamp_move(g, cell, dir);
  } else {
    next = clamp_move(g, cell, intent);
  }
  return {next, g.safe(next)};
}

// rows indexed by (cell * kNumIntents + intent), columns by next cell
inline Mat grid_transition_kernel(const GridSpec& g) {
  g.validate();
  Mat k(g.cells() * kNumIntents, g.cells());
  for (int c = 0; c < g.cells(); ++c) {
    for (int z = 0; z < kNumIntents; ++z) {
      double* row = k.row(c * kNumIntents + z);
      row[clamp_move(g, c, z)] += 1.0 - g.p_slip;
      for (int dir = 1; dir <= 4; ++dir) row[clamp_move(g, c, dir)] += g.p_slip / 4.0;
    }
  }
  return k;
}

// Text form: key-value lines followed by the board, one row per line, H for
// hazard and . for free cells.
inline std::string format_grid(const GridSpec& g) {
  std::ostringstream ss;
  ss << "p_slip " << g.p_slip << "\n";
  ss << "horizon " << g.horizon << "\n";
  ss << "map\n";
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) ss << (g.hazard(g.cell_id(x, y)) ? 'H' : '.');
    ss << "\n";
  }
  return ss.str();
}

inline GridSpec parse_grid(const std::string& text) {
  GridSpec g;
  g.hazards.clear();
  std::istringstream ss(text);
  std::string line;
  bool in_map = false;
  std::vector<std::string> rows;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (in_map) {
      rows.push_back(line);
      continue;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "map") {
      in_map = true;
    } else if (key == "p_slip") {
      ls >> g.p_slip;
    } else if (key == "horizon") {
      ls >> g.horizon;
    } else {
      throw std::invalid_argument("grid config: unknown key '" + key + "'");
    }
  }
  if (rows.empty()) throw std::invalid_argument("grid config: missing map");
  g.height = static_cast<int>(rows.size());
  g.width = static_cast<int>(rows[0].size());
  for (int y = 0; y < g.height; ++y) {
    if (static_cast<int>(rows[y].size()) != g.width)
      throw std::invalid_argument("grid config: ragged map rows");
    for (int x = 0; x < g.width; ++x) {
      const char c = rows[y][x];
      if (c == 'H') g.hazards.insert(g.cell_id(x, y));
      else if (c != '.') throw std::invalid_argument("grid config: bad cell char");
    }
  }
  g.validate();
  return g;
}

}  // namespace cmp
