#include "pocus/eval/plots.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <opencv2/imgproc.hpp>

namespace pocus::eval {

namespace {

constexpr int kSize = 480;
constexpr int kMargin = 60;

const std::array<cv::Scalar, 6> kPalette{cv::Scalar(180, 119, 31), cv::Scalar(14, 127, 255), cv::Scalar(44, 160, 44),
                                         cv::Scalar(40, 39, 214), cv::Scalar(189, 103, 148), cv::Scalar(75, 86, 140)};

void text(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.45) {
  cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
}

}  // namespace

cv::Mat plot_curves(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                    const std::string& y_label, bool diagonal) {
  cv::Mat img(kSize, kSize, CV_8UC3, cv::Scalar(255, 255, 255));
  const int span = kSize - 2 * kMargin;
  auto px = [&](double x, double y) {
    return cv::Point(kMargin + static_cast<int>(std::clamp(x, 0.0, 1.0) * span),
                     kSize - kMargin - static_cast<int>(std::clamp(y, 0.0, 1.0) * span));
  };
  cv::rectangle(img, px(0, 0), px(1, 1), cv::Scalar(0, 0, 0), 1);
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    text(img, fmt::format("{:.2f}", v), px(v, 0) + cv::Point(-14, 18), 0.35);
    text(img, fmt::format("{:.2f}", v), px(0, v) + cv::Point(-40, 4), 0.35);
  }
  if (diagonal) cv::line(img, px(0, 0), px(1, 1), cv::Scalar(160, 160, 160), 1, cv::LINE_AA);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& sr = series[s];
    const cv::Scalar colour = kPalette[s % kPalette.size()];
    for (std::size_t i = 1; i < sr.x.size(); ++i) {
      cv::line(img, px(sr.x[i - 1], sr.y[i - 1]), px(sr.x[i], sr.y[i]), colour, 2, cv::LINE_AA);
    }
    const cv::Point key(kMargin + 10, kMargin + 18 + 18 * static_cast<int>(s));
    cv::line(img, key, key + cv::Point(20, 0), colour, 2);
    text(img, sr.name, key + cv::Point(26, 5));
  }
  text(img, title, cv::Point(kMargin, kMargin - 20), 0.6);
  text(img, x_label, cv::Point(kSize / 2 - 60, kSize - 15));
  cv::Mat ylab(30, kSize, CV_8UC3, cv::Scalar(255, 255, 255));
  text(ylab, y_label, cv::Point(kSize / 2 - 60, 20));
  cv::rotate(ylab, ylab, cv::ROTATE_90_COUNTERCLOCKWISE);
  ylab(cv::Rect(0, 0, 30, kSize)).copyTo(img(cv::Rect(0, 0, 30, kSize)));
  return img;
}

cv::Mat plot_confusion(const ConfusionMatrix& cm, bool row_normalized) {
  const int k = cm.n_classes();
  const auto norm = row_normalized ? cm.row_normalized() : cm.col_normalized();
  cv::Mat img(kSize, kSize, CV_8UC3, cv::Scalar(255, 255, 255));
  const int cell = (kSize - 2 * kMargin) / std::max(k, 1);
  for (int t = 0; t < k; ++t) {
    for (int p = 0; p < k; ++p) {
      const double v = norm[static_cast<std::size_t>(t) * k + p];
      const int shade = 255 - static_cast<int>(v * 200);
      const cv::Rect r(kMargin + p * cell, kMargin + t * cell, cell, cell);
      cv::rectangle(img, r, cv::Scalar(255, shade, shade), cv::FILLED);
      cv::rectangle(img, r, cv::Scalar(120, 120, 120), 1);
      text(img, fmt::format("{:.2f}", v), r.tl() + cv::Point(cell / 2 - 16, cell / 2 - 2));
      text(img, fmt::format("({})", cm.at(t, p)), r.tl() + cv::Point(cell / 2 - 16, cell / 2 + 16), 0.35);
    }
    text(img, cm.class_names()[t], cv::Point(4, kMargin + t * cell + cell / 2), 0.4);
    text(img, cm.class_names()[t], cv::Point(kMargin + t * cell + 4, kMargin - 8), 0.4);
  }
  text(img, "true \\ predicted", cv::Point(4, 20), 0.45);
  return img;
}

}  // namespace pocus::eval
