// Copyright 2026 The poolrank Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Candidate embedding store.
//
// On-disk layout ("LRKE", version 1):
//
//   offset  size  field
//   0       4     magic "LRKE"
//   4       1     version (1)
//   5       1     dtype (1 = f32 LE, 2 = f64 LE)
//   6       2     reserved, zero
//   8       8     count (u64 LE)
//   16      8     dim (u64 LE)
//   24      ...   count * dim values, row-major
//
// Embedding stores are always dtype 1. dtype 2 is used only for checkpoint
// tensors, which must round-trip double precision exactly.
//
// A sidecar `<store>.ids` holds one external id per line (line i <-> row i).

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "poolrank/common.hpp"

namespace poolrank {

static_assert(std::endian::native == std::endian::little,
              "store payloads are mapped directly; little-endian host required");

inline constexpr std::array<char, 4> kStoreMagic = {'L', 'R', 'K', 'E'};
inline constexpr std::uint8_t kStoreVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;
inline constexpr std::uint8_t kDtypeF64 = 2;
inline constexpr std::size_t kStoreHeaderBytes = 24;

namespace detail {

// Read-only memory mapping of a whole file.
class MappedFile {
 public:
  explicit MappedFile(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_RDONLY);
    if (fd_ < 0) throw DataError("cannot open " + path.string());
    struct stat st {};
    if (::fstat(fd_, &st) != 0) {
      ::close(fd_);
      throw DataError("cannot stat " + path.string());
    }
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ > 0) {
      void* p = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd_, 0);
      if (p == MAP_FAILED) {
        ::close(fd_);
        throw DataError("cannot map " + path.string());
      }
      base_ = static_cast<const std::byte*>(p);
    }
  }
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;
  ~MappedFile() {
    if (base_) ::munmap(const_cast<std::byte*>(base_), size_);
    if (fd_ >= 0) ::close(fd_);
  }

  const std::byte* data() const { return base_; }
  std::size_t size() const { return size_; }

 private:
  int fd_ = -1;
  const std::byte* base_ = nullptr;
  std::size_t size_ = 0;
};

inline void put_u64(std::array<char, kStoreHeaderBytes>& h, std::size_t off,
                    std::uint64_t v) {
  for (int i = 0; i < 8; ++i) h[off + i] = static_cast<char>((v >> (8 * i)) & 0xff);
}

inline std::uint64_t get_u64(const std::byte* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::array<char, kStoreHeaderBytes> make_header(std::uint8_t dtype,
                                                       std::uint64_t count,
                                                       std::uint64_t dim) {
  std::array<char, kStoreHeaderBytes> h{};
  std::copy(kStoreMagic.begin(), kStoreMagic.end(), h.begin());
  h[4] = static_cast<char>(kStoreVersion);
  h[5] = static_cast<char>(dtype);
  put_u64(h, 8, count);
  put_u64(h, 16, dim);
  return h;
}

struct Header {
  std::uint8_t dtype;
  std::uint64_t count;
  std::uint64_t dim;
};

inline Header parse_header(const MappedFile& file, const std::string& name) {
  if (file.size() < kStoreHeaderBytes) {
    throw DataError(name + ": truncated header");
  }
  const std::byte* p = file.data();
  if (std::memcmp(p, kStoreMagic.data(), 4) != 0) {
    throw DataError(name + ": bad magic");
  }
  if (static_cast<std::uint8_t>(p[4]) != kStoreVersion) {
    throw DataError(name + ": version mismatch (got " +
                    std::to_string(static_cast<int>(p[4])) + ")");
  }
  Header h{static_cast<std::uint8_t>(p[5]), get_u64(p + 8), get_u64(p + 16)};
  if (h.dtype != kDtypeF32 && h.dtype != kDtypeF64) {
    throw DataError(name + ": unknown dtype " + std::to_string(h.dtype));
  }
  const std::uint64_t width = h.dtype == kDtypeF32 ? 4 : 8;
  const std::uint64_t available = file.size() - kStoreHeaderBytes;
  if (h.dim != 0 && h.count > available / width / h.dim) {
    throw DataError(name + ": truncated payload (declared " +
                    std::to_string(h.count) + "x" + std::to_string(h.dim) +
                    ")");
  }
  return h;
}

inline void write_file(const std::filesystem::path& path,
                       const std::array<char, kStoreHeaderBytes>& header,
                       const void* payload, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(header.data(), header.size());
  if (bytes > 0) out.write(static_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
  out.flush();
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace detail

inline std::filesystem::path ids_sidecar_path(const std::filesystem::path& store) {
  return std::filesystem::path(store.string() + ".ids");
}

// Dense count x dim matrix of binary32 candidate embeddings. Immutable once
// constructed; copies share the underlying buffer (owned or memory-mapped).
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  EmbeddingMatrix(std::size_t count, std::size_t dim, std::vector<float> values,
                  std::vector<std::uint64_t> ids = {})
      : count_(count), dim_(dim) {
    if (dim == 0) throw DimensionError("embedding dim must be positive");
    if (values.size() != count * dim) {
      throw DimensionError("data length " + std::to_string(values.size()) +
                           " != count*dim " + std::to_string(count * dim));
    }
    auto owned = std::make_shared<std::vector<float>>(std::move(values));
    data_ = owned->data();
    keepalive_ = std::move(owned);
    check_finite();
    set_ids(std::move(ids));
  }

  static EmbeddingMatrix from_rows(const std::vector<std::vector<double>>& rows,
                                   std::size_t dim_if_empty = 1) {
    const std::size_t dim = rows.empty() ? dim_if_empty : rows.front().size();
    std::vector<float> v;
    v.reserve(rows.size() * dim);
    for (const auto& r : rows) {
      if (r.size() != dim) throw DimensionError("ragged rows");
      for (double x : r) v.push_back(static_cast<float>(x));
    }
    return EmbeddingMatrix(rows.size(), dim, std::move(v));
  }

  std::size_t count() const { return count_; }
  std::size_t dim() const { return dim_; }
  // Satisfies the RowSource shape used by clustering.
  std::size_t size() const { return count_; }

  std::span<const float> row(std::size_t i) const {
    return {data_ + i * dim_, dim_};
  }
  std::span<const float> values() const { return {data_, count_ * dim_}; }

  bool has_custom_ids() const { return !ids_.empty(); }
  std::uint64_t id(std::size_t row) const {
    return ids_.empty() ? static_cast<std::uint64_t>(row) : ids_[row];
  }
  std::vector<std::uint64_t> ids() const {
    if (!ids_.empty()) return ids_;
    std::vector<std::uint64_t> out(count_);
    for (std::size_t i = 0; i < count_; ++i) out[i] = i;
    return out;
  }

  std::optional<std::size_t> row_of(std::uint64_t id) const {
    if (ids_.empty()) {
      if (id < count_) return static_cast<std::size_t>(id);
      return std::nullopt;
    }
    auto it = index_->find(id);
    if (it == index_->end()) return std::nullopt;
    return it->second;
  }

  // Same payload, new id assignment.
  EmbeddingMatrix with_ids(std::vector<std::uint64_t> ids) const {
    EmbeddingMatrix m = *this;
    m.set_ids(std::move(ids));
    return m;
  }

  friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    if (a.count_ != b.count_ || a.dim_ != b.dim_) return false;
    if (a.count_ * a.dim_ > 0 &&
        std::memcmp(a.data_, b.data_, a.count_ * a.dim_ * sizeof(float)) != 0) {
      return false;
    }
    for (std::size_t i = 0; i < a.count_; ++i) {
      if (a.id(i) != b.id(i)) return false;
    }
    return true;
  }

 private:
  friend EmbeddingMatrix read_store(const std::filesystem::path&);

  void check_finite() const {
    for (std::size_t r = 0; r < count_; ++r) {
      for (float x : row(r)) {
        if (!std::isfinite(x)) {
          throw DataError("non-finite value at row " + std::to_string(r));
        }
      }
    }
  }

  void set_ids(std::vector<std::uint64_t> ids) {
    index_.reset();
    ids_.clear();
    if (ids.empty()) return;
    if (ids.size() != count_) {
      throw DimensionError("ids length " + std::to_string(ids.size()) +
                           " != count " + std::to_string(count_));
    }
    bool identity = true;
    for (std::size_t i = 0; i < ids.size(); ++i) identity &= ids[i] == i;
    if (identity) return;
    auto index = std::make_shared<std::unordered_map<std::uint64_t, std::size_t>>();
    index->reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!index->emplace(ids[i], i).second) {
        throw DataError("duplicate candidate id " + std::to_string(ids[i]));
      }
    }
    ids_ = std::move(ids);
    index_ = std::move(index);
  }

  std::size_t count_ = 0;
  std::size_t dim_ = 1;
  const float* data_ = nullptr;
  std::shared_ptr<const void> keepalive_;
  std::vector<std::uint64_t> ids_;
  std::shared_ptr<const std::unordered_map<std::uint64_t, std::size_t>> index_;
};

// Zero-copy prefix view: row i is the first prefix_dim values of source row i.
class TruncatedView {
 public:
  TruncatedView(const EmbeddingMatrix& source, std::size_t prefix_dim)
      : source_(&source), prefix_dim_(prefix_dim) {
    if (prefix_dim == 0) throw DimensionError("prefix_dim must be positive");
    if (prefix_dim > source.dim()) {
      throw DimensionError("prefix_dim " + std::to_string(prefix_dim) +
                           " exceeds dim " + std::to_string(source.dim()));
    }
  }

  std::size_t size() const { return source_->count(); }
  std::size_t dim() const { return prefix_dim_; }
  std::span<const float> row(std::size_t i) const {
    return source_->row(i).first(prefix_dim_);
  }
  const EmbeddingMatrix& source() const { return *source_; }

 private:
  const EmbeddingMatrix* source_;
  std::size_t prefix_dim_;
};

inline TruncatedView truncate_view(const EmbeddingMatrix& m, std::size_t prefix_dim) {
  return TruncatedView(m, prefix_dim);
}

// --- id sidecar --------------------------------------------------------------

inline void write_id_map(const std::filesystem::path& path,
                         const std::vector<std::string>& ids) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (const auto& id : ids) {
    if (id.find('\n') != std::string::npos) {
      throw DataError("id contains newline: " + id);
    }
    out << id << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

inline std::vector<std::string> read_id_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!seen.insert(line).second) throw DataError("duplicate id in id-map: " + line);
    ids.push_back(line);
  }
  return ids;
}

inline std::optional<std::uint64_t> parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

// --- store I/O ---------------------------------------------------------------

// Writes the store file; custom numeric ids go to the `.ids` sidecar.
inline void write_store(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  for (std::size_t r = 0; r < m.count(); ++r) {
    for (float x : m.row(r)) {
      if (!std::isfinite(x)) {
        throw DataError("non-finite value at row " + std::to_string(r));
      }
    }
  }
  const auto header = detail::make_header(kDtypeF32, m.count(), m.dim());
  detail::write_file(path, header, m.values().data(), m.values().size_bytes());
  if (m.has_custom_ids()) {
    std::vector<std::string> lines;
    lines.reserve(m.count());
    for (std::size_t i = 0; i < m.count(); ++i) lines.push_back(std::to_string(m.id(i)));
    write_id_map(ids_sidecar_path(path), lines);
  }
}

// Maps the store file read-only; rows are served straight from the mapping.
// A numeric `.ids` sidecar becomes the matrix ids. Textual sidecars are left
// for read_id_map and the matrix keeps identity ids.
inline EmbeddingMatrix read_store(const std::filesystem::path& path) {
  auto file = std::make_shared<detail::MappedFile>(path);
  const auto h = detail::parse_header(*file, path.string());
  if (h.dtype != kDtypeF32) {
    throw DataError(path.string() + ": embedding store must be f32 (dtype 1)");
  }
  if (h.dim == 0) throw DataError(path.string() + ": dim must be positive");
  EmbeddingMatrix m;
  m.count_ = static_cast<std::size_t>(h.count);
  m.dim_ = static_cast<std::size_t>(h.dim);
  m.data_ = reinterpret_cast<const float*>(file->data() + kStoreHeaderBytes);
  m.keepalive_ = std::move(file);
  m.check_finite();

  const auto sidecar = ids_sidecar_path(path);
  if (std::filesystem::exists(sidecar)) {
    const auto lines = read_id_map(sidecar);
    if (lines.size() != m.count_) {
      throw DataError(sidecar.string() + ": " + std::to_string(lines.size()) +
                      " ids for " + std::to_string(m.count_) + " rows");
    }
    std::vector<std::uint64_t> ids;
    ids.reserve(lines.size());
    for (const auto& l : lines) {
      auto v = parse_u64(l);
      if (!v) return m;
      ids.push_back(*v);
    }
    m.set_ids(std::move(ids));
  }
  return m;
}

// f64 tensors (checkpoints). Same header, dtype 2.
inline void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  if (!all_finite(t.data)) throw NumericError("non-finite tensor value: " + path.string());
  const auto header = detail::make_header(kDtypeF64, t.rows, t.cols);
  detail::write_file(path, header, t.data.data(), t.data.size() * sizeof(double));
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  detail::MappedFile file(path);
  const auto h = detail::parse_header(file, path.string());
  if (h.dtype != kDtypeF64) throw DataError(path.string() + ": expected f64 tensor");
  Tensor t(static_cast<std::size_t>(h.count), static_cast<std::size_t>(h.dim));
  if (!t.data.empty()) {
    std::memcpy(t.data.data(), file.data() + kStoreHeaderBytes, t.data.size() * sizeof(double));
  }
  return t;
}

}  // namespace poolrank
