#include "cdgp/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace cdgp {

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  // host is little-endian; write raw
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw TruncatedFile(path + ": checkpoint ends early");
  return v;
}

}  // namespace

void CheckpointWriter::add(const std::string& name, const Mat& value) {
  Record r;
  r.name = name;
  r.dims = {static_cast<std::uint64_t>(value.rows()),
            static_cast<std::uint64_t>(value.cols())};
  r.payload.resize(static_cast<std::size_t>(value.size()));
  for (Index i = 0; i < value.rows(); ++i)
    for (Index j = 0; j < value.cols(); ++j)
      r.payload[static_cast<std::size_t>(i * value.cols() + j)] = value(i, j);
  records_.push_back(std::move(r));
}

void CheckpointWriter::add_scalar(const std::string& name, double value) {
  records_.push_back(Record{name, {1}, {value}});
}

void CheckpointWriter::add_u64(const std::string& name, std::uint64_t value) {
  double d;
  std::memcpy(&d, &value, sizeof(d));
  records_.push_back(Record{name, {1}, {d}});
}

void CheckpointWriter::add_ints(const std::string& name,
                                const std::vector<int>& values) {
  Record r;
  r.name = name;
  r.dims = {static_cast<std::uint64_t>(values.size())};
  r.payload.assign(values.begin(), values.end());
  records_.push_back(std::move(r));
}

void CheckpointWriter::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write("CDGP", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, records_.size());
  for (const Record& r : records_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dims.size()));
    for (std::uint64_t d : r.dims) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(r.payload.data()),
              static_cast<std::streamsize>(r.payload.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed for " + path);
}

CheckpointReader::CheckpointReader(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4)) throw TruncatedFile(path + ": no magic");
  if (std::memcmp(magic, "CDGP", 4) != 0)
    throw BadMagic(path + ": not a CDGP checkpoint");
  const auto version = take<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw VersionMismatch(path + ": checkpoint version " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  const auto count = take<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = take<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len))
      throw TruncatedFile(path + ": record name truncated");
    Record r;
    const auto rank = take<std::uint8_t>(in, path);
    std::uint64_t total = 1;
    for (int k = 0; k < rank; ++k) {
      r.dims.push_back(take<std::uint64_t>(in, path));
      total *= r.dims.back();
    }
    r.payload.resize(total);
    if (total > 0 &&
        !in.read(reinterpret_cast<char*>(r.payload.data()),
                 static_cast<std::streamsize>(total * sizeof(double))))
      throw TruncatedFile(path + ": payload truncated for " + name);
    records_.emplace(std::move(name), std::move(r));
  }
}

bool CheckpointReader::has(const std::string& name) const {
  return records_.count(name) > 0;
}

const CheckpointReader::Record& CheckpointReader::get(
    const std::string& name) const {
  auto it = records_.find(name);
  if (it == records_.end())
    throw VersionMismatch("checkpoint record '" + name + "' missing");
  return it->second;
}

Mat CheckpointReader::matrix(const std::string& name) const {
  const Record& r = get(name);
  if (r.dims.size() != 2)
    throw VersionMismatch("record '" + name + "' is not a matrix");
  Mat m(static_cast<Index>(r.dims[0]), static_cast<Index>(r.dims[1]));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      m(i, j) = r.payload[static_cast<std::size_t>(i * m.cols() + j)];
  return m;
}

double CheckpointReader::scalar(const std::string& name) const {
  const Record& r = get(name);
  if (r.payload.size() != 1)
    throw VersionMismatch("record '" + name + "' is not a scalar");
  return r.payload[0];
}

std::uint64_t CheckpointReader::u64(const std::string& name) const {
  const double d = scalar(name);
  std::uint64_t v;
  std::memcpy(&v, &d, sizeof(v));
  return v;
}

std::vector<int> CheckpointReader::ints(const std::string& name) const {
  const Record& r = get(name);
  std::vector<int> out(r.payload.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<int>(r.payload[i]);
  return out;
}

std::vector<std::string> CheckpointReader::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : records_) out.push_back(k);
  return out;
}

}  // namespace cdgp
