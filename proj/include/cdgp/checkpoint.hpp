#pragma once

#include "cdgp/common.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cdgp {

// Binary container: magic "CDGP", u32 version, u64 record count, then named
// records (u32 name length, name bytes, u8 rank, u64 dims, float64 payload);
// all integers and payloads little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointWriter {
 public:
  void add(const std::string& name, const Mat& value);
  void add_scalar(const std::string& name, double value);
  void add_u64(const std::string& name, std::uint64_t value);  // bit-cast
  void add_ints(const std::string& name, const std::vector<int>& values);
  void write(const std::string& path) const;

 private:
  struct Record {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<double> payload;
  };
  std::vector<Record> records_;
};

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::string& path);

  bool has(const std::string& name) const;
  Mat matrix(const std::string& name) const;
  double scalar(const std::string& name) const;
  std::uint64_t u64(const std::string& name) const;
  std::vector<int> ints(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  struct Record {
    std::vector<std::uint64_t> dims;
    std::vector<double> payload;
  };
  const Record& get(const std::string& name) const;
  std::map<std::string, Record> records_;
};

}  // namespace cdgp
