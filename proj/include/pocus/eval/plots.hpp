#pragma once

#include <opencv2/core.hpp>
#include <string>
#include <vector>

#include "pocus/eval/metrics.hpp"

namespace pocus::eval {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

// Line chart on the unit square, 8-bit BGR. `diagonal` draws the chance line.
cv::Mat plot_curves(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                    const std::string& y_label, bool diagonal);

// Heat-mapped grid with the value printed in each cell.
cv::Mat plot_confusion(const ConfusionMatrix& cm, bool row_normalized);

}  // namespace pocus::eval
