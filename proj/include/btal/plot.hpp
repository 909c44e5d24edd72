#pragma once

#include <filesystem>
#include <vector>

namespace btal {

/// Reads a run directory (metrics.csv), a run root (seed_*/metrics.csv) or a
/// sweep root (summary.csv) and writes learning-curve SVGs plus curves.csv
/// with the plotted values copied verbatim from the input files. Runs with
/// 2D plot data also get panel_2d*.svg (heat map of M_{s-1} and the selected
/// pairs of round s, one sub-panel per round). Throws kIo when nothing
/// plottable is found.
std::vector<std::filesystem::path> plot_artifact(const std::filesystem::path& input,
                                                 const std::filesystem::path& out);

}  // namespace btal
