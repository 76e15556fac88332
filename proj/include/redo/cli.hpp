#pragma once

// Command-line verbs: make-dataset, train, segment, redraw, eval.
// Exit codes: 0 success, 1 usage or config error, 2 runtime failure.

#include <cstdint>
#include <string>
#include <vector>

#include "redo/config.hpp"
#include "redo/data.hpp"
#include "redo/training.hpp"

namespace redo {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args[0] is the program name

/// Tiles laid left to right with a 2 px white gap.
Raster tile_row(const std::vector<Raster>& tiles);
/// Rows stacked top to bottom, same gap; rows may differ in width.
Raster stack_rows(const std::vector<Raster>& rows);

/// input | soft mask of region i | `count` redraws with codes drawn from `seed`.
Raster redraw_panel(ModelSet<float>& models, const Image& input, RegionIndex i, std::uint64_t seed, int count);
/// One row per image: input, every soft mask, one redraw per region. Codes are shared down the columns.
Raster training_panel(ModelSet<float>& models, const std::vector<Image>& images, std::uint64_t seed);

/// Training and validation data named by a run config.
struct LoadedData {
  TrainData data;
  std::vector<LabeledExample> test;
};
LoadedData load_run_data(const RunConfig& cfg);

}  // namespace redo
