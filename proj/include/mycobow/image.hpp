#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "mycobow/error.hpp"

namespace mycobow {

/// Raw scan pixels, interleaved RGB (or single channel), as stored in the file.
struct Image {
  int rows = 0;
  int cols = 0;
  int channels = 1;
  std::uint16_t max_value = 65535;  // 255 for 8-bit sources
  std::vector<std::uint16_t> samples;

  std::size_t index(int r, int c, int ch) const {
    return (static_cast<std::size_t>(r) * cols + c) * channels + ch;
  }
  double normalized(int r, int c, int ch) const {
    return static_cast<double>(samples[index(r, c, ch)]) / max_value;
  }
  int bit_depth() const { return max_value == 255 ? 8 : 16; }
};

inline Image from_mat(const cv::Mat& src, const std::string& name) {
  if (src.empty()) throw data_error("unreadable image '" + name + "'");
  cv::Mat m = src;
  if (m.depth() != CV_8U && m.depth() != CV_16U) {
    throw data_error("image '" + name + "' must be 8-bit or 16-bit");
  }
  Image img;
  img.rows = m.rows;
  img.cols = m.cols;
  img.max_value = m.depth() == CV_8U ? 255 : 65535;
  const int src_channels = m.channels();
  if (src_channels != 1 && src_channels != 3 && src_channels != 4) {
    throw data_error("image '" + name + "' has unsupported channel count " + std::to_string(src_channels));
  }
  img.channels = src_channels == 1 ? 1 : 3;
  img.samples.resize(static_cast<std::size_t>(img.rows) * img.cols * img.channels);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      for (int ch = 0; ch < img.channels; ++ch) {
        // OpenCV stores colour as BGR(A); we keep RGB.
        const int src_ch = img.channels == 1 ? 0 : 2 - ch;
        std::uint16_t v;
        if (m.depth() == CV_8U) {
          v = m.ptr<std::uint8_t>(r)[c * src_channels + src_ch];
        } else {
          v = m.ptr<std::uint16_t>(r)[c * src_channels + src_ch];
        }
        img.samples[img.index(r, c, ch)] = v;
      }
    }
  }
  return img;
}

inline cv::Mat to_mat(const Image& img) {
  const int type = img.max_value == 255 ? CV_MAKETYPE(CV_8U, img.channels) : CV_MAKETYPE(CV_16U, img.channels);
  cv::Mat m(img.rows, img.cols, type);
  for (int r = 0; r < img.rows; ++r) {
    for (int c = 0; c < img.cols; ++c) {
      for (int ch = 0; ch < img.channels; ++ch) {
        const int dst_ch = img.channels == 1 ? 0 : 2 - ch;
        const auto v = img.samples[img.index(r, c, ch)];
        if (img.max_value == 255) {
          m.ptr<std::uint8_t>(r)[c * img.channels + dst_ch] = static_cast<std::uint8_t>(v);
        } else {
          m.ptr<std::uint16_t>(r)[c * img.channels + dst_ch] = v;
        }
      }
    }
  }
  return m;
}

/// Reads 8/16-bit grayscale or RGB(A) PNG and TIFF files. Alpha is dropped.
inline Image read_image(const std::filesystem::path& path) {
  cv::Mat m;
  try {
    m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw data_error("unreadable image '" + path.string() + "': " + e.what());
  }
  return from_mat(m, path.string());
}

inline void write_image(const Image& img, const std::filesystem::path& path) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), to_mat(img));
  } catch (const cv::Exception& e) {
    throw data_error("cannot write image '" + path.string() + "': " + e.what());
  }
  if (!ok) throw data_error("cannot write image '" + path.string() + "'");
}

}  // namespace mycobow
