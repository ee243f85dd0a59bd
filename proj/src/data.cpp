#include "cdgp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cdgp {

void Dataset::validate() const {
  if (size() <= 0) throw InvalidSize("dataset is empty");
  if (images.cols() != flat_dim())
    throw GeometryMismatch("dataset images do not match declared geometry");
  if (static_cast<Index>(labels.size()) != size())
    throw CountMismatch("label count differs from image count");
  if (num_classes < 2) throw BadLabel("dataset needs at least two classes");
  for (int y : labels)
    if (y < 0 || y >= num_classes)
      throw BadLabel("label " + std::to_string(y) + " outside [0, " +
                     std::to_string(num_classes) + ")");
  if ((images.array() < 0.0).any() || (images.array() > 1.0).any())
    throw MalformedRow("pixel values outside [0,1]");
}

namespace {

std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw TruncatedFile(path + ": unexpected end of file in header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

}  // namespace

Dataset load_mnist(const std::string& image_path, const std::string& label_path,
                   const std::string& split) {
  std::ifstream img = open_binary(image_path);
  const std::uint32_t img_magic = read_be_u32(img, image_path);
  if (img_magic != 0x00000803u)
    throw BadMagic(image_path + ": magic " + std::to_string(img_magic));
  const std::uint32_t n = read_be_u32(img, image_path);
  const std::uint32_t rows = read_be_u32(img, image_path);
  const std::uint32_t cols = read_be_u32(img, image_path);

  std::ifstream lab = open_binary(label_path);
  const std::uint32_t lab_magic = read_be_u32(lab, label_path);
  if (lab_magic != 0x00000801u)
    throw BadMagic(label_path + ": magic " + std::to_string(lab_magic));
  const std::uint32_t n_lab = read_be_u32(lab, label_path);
  if (n != n_lab)
    throw CountMismatch("MNIST: " + std::to_string(n) + " images vs " +
                        std::to_string(n_lab) + " labels");

  Dataset d;
  d.width = cols;
  d.height = rows;
  d.channels = 1;
  d.num_classes = 10;
  d.split = split;
  d.images.resize(n, static_cast<Index>(rows) * cols);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), buf.size()))
      throw TruncatedFile(image_path + ": pixel data ends at image " +
                          std::to_string(i));
    for (std::size_t k = 0; k < buf.size(); ++k)
      d.images(i, static_cast<Index>(k)) = buf[k] / 255.0;
  }
  d.labels.resize(n);
  std::vector<unsigned char> lbuf(n);
  if (n > 0 && !lab.read(reinterpret_cast<char*>(lbuf.data()), n))
    throw TruncatedFile(label_path + ": label data truncated");
  for (std::uint32_t i = 0; i < n; ++i) {
    if (lbuf[i] > 9) throw BadLabel("MNIST label " + std::to_string(lbuf[i]));
    d.labels[i] = lbuf[i];
  }
  d.validate();
  return d;
}

Dataset load_rectangles_image(const std::string& path, const std::string& split) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Dataset d;
  d.width = 28;
  d.height = 28;
  d.channels = 1;
  d.num_classes = 2;
  d.split = split;

  std::vector<double> pixels;
  std::vector<int> labels;
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream row(line);
    std::vector<double> vals;
    double v;
    while (row >> v) vals.push_back(v);
    if (vals.size() != 785)
      throw MalformedRow(path + ":" + std::to_string(line_no) + ": got " +
                         std::to_string(vals.size()) + " fields, expected 785");
    for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
      if (vals[k] < 0.0 || vals[k] > 1.0)
        throw MalformedRow(path + ":" + std::to_string(line_no) +
                           ": pixel outside [0,1]");
      pixels.push_back(vals[k]);
    }
    const double raw_label = vals.back();
    if (raw_label != 0.0 && raw_label != 1.0)
      throw BadLabel(path + ":" + std::to_string(line_no) + ": label " +
                     std::to_string(raw_label));
    labels.push_back(static_cast<int>(raw_label));
  }
  if (labels.empty()) throw TruncatedFile(path + ": no rows");
  d.images.resize(static_cast<Index>(labels.size()), 784);
  for (Index i = 0; i < d.images.rows(); ++i)
    for (Index k = 0; k < 784; ++k)
      d.images(i, k) = pixels[static_cast<std::size_t>(i) * 784 + k];
  d.labels = std::move(labels);
  d.validate();
  return d;
}

Dataset load_cifar10(const std::vector<std::string>& batch_paths,
                     const std::string& split) {
  if (batch_paths.empty()) throw IoError("cifar10: no batch files given");
  constexpr Index kRecord = 3073;
  constexpr Index kSide = 32;
  constexpr Index kPlane = kSide * kSide;

  Dataset d;
  d.width = kSide;
  d.height = kSide;
  d.channels = 3;
  d.num_classes = 10;
  d.split = split;

  std::vector<std::vector<unsigned char>> raw;
  Index total = 0;
  for (const std::string& path : batch_paths) {
    std::ifstream in = open_binary(path);
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<Index>(in.tellg());
    in.seekg(0, std::ios::beg);
    if (bytes == 0 || bytes % kRecord != 0)
      throw BadRecordSize(path + ": size " + std::to_string(bytes) +
                          " is not a multiple of 3073");
    raw.emplace_back(bytes);
    if (!in.read(reinterpret_cast<char*>(raw.back().data()), bytes))
      throw TruncatedFile(path);
    total += bytes / kRecord;
  }

  d.images.resize(total, kPlane * 3);
  d.labels.resize(total);
  Index at = 0;
  for (const auto& bytes : raw) {
    const Index n = static_cast<Index>(bytes.size()) / kRecord;
    for (Index r = 0; r < n; ++r, ++at) {
      const unsigned char* rec = bytes.data() + r * kRecord;
      if (rec[0] > 9) throw BadLabel("cifar10 label " + std::to_string(rec[0]));
      d.labels[at] = rec[0];
      // channel-planar source -> interleaved (y, x, c)
      for (Index y = 0; y < kSide; ++y)
        for (Index x = 0; x < kSide; ++x)
          for (Index c = 0; c < 3; ++c)
            d.images(at, (y * kSide + x) * 3 + c) =
                rec[1 + c * kPlane + y * kSide + x] / 255.0;
    }
  }
  d.validate();
  return d;
}

namespace {

void draw_rect_border(Mat& row, Index size, Index x0, Index y0, Index w, Index h) {
  auto set = [&](Index y, Index x) { row(0, y * size + x) = 1.0; };
  for (Index x = x0; x < x0 + w; ++x) {
    set(y0, x);
    set(y0 + h - 1, x);
  }
  for (Index y = y0; y < y0 + h; ++y) {
    set(y, x0);
    set(y, x0 + w - 1);
  }
}

}  // namespace

Dataset generate_toy(Rng rng, Index n, Index size, const std::string& task) {
  if (n < 2 || n % 2 != 0)
    throw InvalidSize("toy datasets need an even, positive sample count");
  if (size < 6) throw InvalidSize("toy image size must be at least 6");

  Dataset d;
  d.width = size;
  d.height = size;
  d.channels = 1;
  d.num_classes = 2;
  d.split = "train";
  d.images = Mat::Zero(n, size * size);
  d.labels.resize(n);

  if (task == "rectangles") {
    for (Index i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % 2);  // balanced by construction
      Index w, h;
      do {
        w = 2 + static_cast<Index>(rng.next_below(size - 2));
        h = 2 + static_cast<Index>(rng.next_below(size - 2));
      } while ((label == 1) != (w > h) || w == h);
      const Index x0 = static_cast<Index>(rng.next_below(size - w + 1));
      const Index y0 = static_cast<Index>(rng.next_below(size - h + 1));
      Mat row = Mat::Zero(1, size * size);
      draw_rect_border(row, size, x0, y0, w, h);
      d.images.row(i) = row.row(0);
      d.labels[i] = label;
    }
  } else if (task == "blobs") {
    const double r = static_cast<double>(size) / 5.0;
    for (Index i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % 2);
      const double cx = (label == 0 ? 0.3 : 0.7) * (size - 1) +
                        0.6 * rng.next_gaussian();
      const double cy = (label == 0 ? 0.3 : 0.7) * (size - 1) +
                        0.6 * rng.next_gaussian();
      for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x) {
          const double dx = x - cx, dy = y - cy;
          const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * r * r));
          d.images(i, y * size + x) = std::min(1.0, std::max(0.0, v));
        }
      d.labels[i] = label;
    }
  } else {
    throw ConfigError("unknown toy task '" + task + "'");
  }
  d.validate();
  return d;
}

Dataset filter_classes(const Dataset& data, const std::vector<int>& classes,
                       Index limit) {
  std::vector<Index> keep;
  for (Index i = 0; i < data.size(); ++i) {
    for (std::size_t c = 0; c < classes.size(); ++c) {
      if (data.labels[i] == classes[c]) {
        keep.push_back(i);
        break;
      }
    }
    if (limit > 0 && static_cast<Index>(keep.size()) >= limit) break;
  }
  if (keep.empty()) throw InvalidSize("class filter kept no rows");
  Dataset out;
  out.width = data.width;
  out.height = data.height;
  out.channels = data.channels;
  out.num_classes = static_cast<int>(classes.size());
  out.split = data.split;
  out.images.resize(static_cast<Index>(keep.size()), data.images.cols());
  out.labels.resize(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.images.row(static_cast<Index>(i)) = data.images.row(keep[i]);
    const int orig = data.labels[keep[i]];
    out.labels[i] = static_cast<int>(
        std::find(classes.begin(), classes.end(), orig) - classes.begin());
  }
  out.validate();
  return out;
}

Dataset synthetic_images(Rng rng, Index n, Index w, Index h, Index c) {
  Dataset d;
  d.width = w;
  d.height = h;
  d.channels = c;
  d.num_classes = 2;
  d.split = "bench";
  d.images.resize(n, w * h * c);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < d.images.cols(); ++k) d.images(i, k) = rng.next_unit();
  d.labels.resize(n);
  for (Index i = 0; i < n; ++i) d.labels[i] = static_cast<int>(i % 2);
  return d;
}

}  // namespace cdgp
