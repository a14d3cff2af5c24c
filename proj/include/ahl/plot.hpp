#pragma once

// Static SVG charts of sigma trajectories and reward traces. Each
// (run, landmark) pair is drawn as
//
//   <g class="trace" data-run="r" data-landmark="i"><polyline points="..."/></g>
//
// Landmarks are told apart by colour, overlaid runs by dash pattern.

#include <span>
#include <string>
#include <vector>

#include "ahl/laoml.hpp"

namespace ahl {

struct PlotRun {
  std::string label;
  RunArtifacts artifacts;
};

/// One polyline point per sigma.csv iteration (x = iteration).
std::string sigma_curves_svg(std::span<const PlotRun> runs, const std::vector<std::string>& landmark_names = {});

/// One polyline point per search iteration (x = iteration, y = mean reward
/// over the K samples).
std::string reward_curves_svg(std::span<const PlotRun> runs, const std::vector<std::string>& landmark_names = {});

}  // namespace ahl
