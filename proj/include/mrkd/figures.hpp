#pragma once

#include <string>
#include <vector>

#include "mrkd/dataset.hpp"
#include "mrkd/scoring.hpp"

namespace mrkd {

// Gaussian kernel density estimate sampled on a fixed grid over [0,1].
// Degenerate inputs (constant scores) fall back to a narrow fixed bandwidth.
std::vector<double> kde_density(const std::vector<double>& samples, int grid_points = 512);

// Area of min(f,g) between two densities on the shared [0,1] grid.
double density_overlap(const std::vector<double>& f, const std::vector<double>& g);

// Normal (blue) and abnormal (red) score densities after per-category
// min-max normalization of the pooled scores. Either class may be empty,
// which plots the remaining density alone.
void write_score_distribution_plot(const std::string& path, const std::vector<double>& normal_scores,
                                   const std::vector<double>& abnormal_scores,
                                   const std::string& title);

// Input image blended with a color-mapped score map, written as PNG at the
// image resolution. The map is min-max normalized per image for display.
void write_heatmap_overlay(const std::string& path, const Tensor& pixels_standardized,
                           const ScoreMap& map);

}  // namespace mrkd
