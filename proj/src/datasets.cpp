#include "bavae/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <zlib.h>

namespace bavae {

namespace fs = std::filesystem;

std::size_t ImageSet::size() const {
  const int p = pixels_per_image();
  return p == 0 ? 0 : data.size() / static_cast<std::size_t>(p);
}

std::span<const std::uint8_t> ImageSet::image(std::size_t n) const {
  const auto p = static_cast<std::size_t>(pixels_per_image());
  return {data.data() + n * p, p};
}

Eigen::MatrixXf ImageSet::batch(std::span<const std::size_t> indices) const {
  const int p = pixels_per_image();
  Eigen::MatrixXf out(p, static_cast<Eigen::Index>(indices.size()));
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= size()) throw std::out_of_range("image index out of range");
    const std::uint8_t* src = data.data() + indices[b] * static_cast<std::size_t>(p);
    float* dst = out.col(static_cast<Eigen::Index>(b)).data();
    for (int i = 0; i < p; ++i) dst[i] = src[i] / 255.0f;
  }
  return out;
}

void FactorTable::validate() const {
  if (sizes.empty()) throw std::invalid_argument("factor table has no factors");
  if (values.size() % sizes.size() != 0) throw std::invalid_argument("factor table is ragged");
  if (!names.empty() && names.size() != sizes.size()) throw std::invalid_argument("factor names/sizes mismatch");
  for (std::size_t n = 0; n < rows(); ++n) {
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      const int v = at(n, k);
      if (v < 0 || v >= sizes[k]) {
        std::ostringstream msg;
        msg << "factor " << k << " of example " << n << " is " << v << ", outside [0, " << sizes[k] << ")";
        throw std::invalid_argument(msg.str());
      }
    }
  }
}

bool FactorTable::is_full_grid() const {
  std::size_t cells = 1;
  for (int s : sizes) cells *= static_cast<std::size_t>(s);
  if (cells != rows()) return false;
  std::vector<bool> seen(cells, false);
  for (std::size_t n = 0; n < rows(); ++n) {
    std::size_t idx = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) idx = idx * sizes[k] + at(n, k);
    if (seen[idx]) return false;
    seen[idx] = true;
  }
  return true;
}

FactorTable FactorTable::subset(std::span<const std::size_t> indices) const {
  FactorTable out;
  out.sizes = sizes;
  out.names = names;
  out.values.reserve(indices.size() * sizes.size());
  for (std::size_t n : indices)
    for (std::size_t k = 0; k < sizes.size(); ++k) out.values.push_back(at(n, k));
  return out;
}

// ---------------------------------------------------------------------------
// npz archives

namespace {

std::uint32_t le32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint64_t le64(const unsigned char* p) {
  return static_cast<std::uint64_t>(le32(p)) | (static_cast<std::uint64_t>(le32(p + 4)) << 32);
}

struct ZipEntry {
  std::string name;
  std::uint16_t method = 0;
  std::uint32_t crc = 0;
  std::uint64_t compressed_size = 0;
  std::uint64_t uncompressed_size = 0;
  std::uint64_t local_offset = 0;
};

void apply_zip64(const unsigned char* extra, std::size_t len, ZipEntry& e, bool has_offset) {
  std::size_t pos = 0;
  while (pos + 4 <= len) {
    const std::uint16_t id = le16(extra + pos);
    const std::uint16_t size = le16(extra + pos + 2);
    const unsigned char* field = extra + pos + 4;
    if (id == 0x0001) {
      std::size_t f = 0;
      if (e.uncompressed_size == 0xffffffffu && f + 8 <= size) { e.uncompressed_size = le64(field + f); f += 8; }
      if (e.compressed_size == 0xffffffffu && f + 8 <= size) { e.compressed_size = le64(field + f); f += 8; }
      if (has_offset && e.local_offset == 0xffffffffu && f + 8 <= size) { e.local_offset = le64(field + f); }
    }
    pos += 4 + size;
  }
}

std::vector<ZipEntry> read_zip_directory(std::ifstream& in, const fs::path& path) {
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t tail = std::min<std::uint64_t>(file_size, 65536 + 22);
  std::vector<unsigned char> buf(tail);
  in.seekg(static_cast<std::streamoff>(file_size - tail));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(tail));
  std::ptrdiff_t eocd = -1;
  for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(tail) - 22; i >= 0; --i) {
    if (le32(buf.data() + i) == 0x06054b50u) { eocd = i; break; }
  }
  if (eocd < 0) throw std::runtime_error(path.string() + ": not a zip/npz archive");
  std::uint64_t count = le16(buf.data() + eocd + 10);
  std::uint64_t cd_size = le32(buf.data() + eocd + 12);
  std::uint64_t cd_offset = le32(buf.data() + eocd + 16);
  // Zip64 end-of-central-directory locator sits right before the classic record.
  if (eocd >= 20 && le32(buf.data() + eocd - 20) == 0x07064b50u) {
    const std::uint64_t z64 = le64(buf.data() + eocd - 20 + 8);
    unsigned char rec[56];
    in.seekg(static_cast<std::streamoff>(z64));
    in.read(reinterpret_cast<char*>(rec), sizeof rec);
    if (le32(rec) == 0x06064b50u) {
      count = le64(rec + 32);
      cd_size = le64(rec + 40);
      cd_offset = le64(rec + 48);
    }
  }
  std::vector<unsigned char> cd(cd_size);
  in.seekg(static_cast<std::streamoff>(cd_offset));
  in.read(reinterpret_cast<char*>(cd.data()), static_cast<std::streamsize>(cd_size));
  if (!in) throw std::runtime_error(path.string() + ": truncated zip central directory");

  std::vector<ZipEntry> entries;
  std::size_t pos = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    if (pos + 46 > cd.size() || le32(cd.data() + pos) != 0x02014b50u) {
      throw std::runtime_error(path.string() + ": corrupt zip central directory");
    }
    const unsigned char* h = cd.data() + pos;
    ZipEntry e;
    e.method = le16(h + 10);
    e.crc = le32(h + 16);
    e.compressed_size = le32(h + 20);
    e.uncompressed_size = le32(h + 24);
    const std::uint16_t name_len = le16(h + 28);
    const std::uint16_t extra_len = le16(h + 30);
    const std::uint16_t comment_len = le16(h + 32);
    e.local_offset = le32(h + 42);
    e.name.assign(reinterpret_cast<const char*>(h + 46), name_len);
    apply_zip64(h + 46 + name_len, extra_len, e, true);
    entries.push_back(std::move(e));
    pos += 46 + name_len + extra_len + comment_len;
  }
  return entries;
}

// Streams one zip entry through an inflater, verifying size and CRC-32.
class EntryReader {
 public:
  EntryReader(std::ifstream& in, const ZipEntry& e, const fs::path& path) : in_(in), entry_(e), path_(path) {
    unsigned char local[30];
    in_.seekg(static_cast<std::streamoff>(e.local_offset));
    in_.read(reinterpret_cast<char*>(local), sizeof local);
    if (!in_ || le32(local) != 0x04034b50u) throw std::runtime_error(path.string() + ": bad local header for " + e.name);
    in_.seekg(static_cast<std::streamoff>(e.local_offset + 30 + le16(local + 26) + le16(local + 28)));
    remaining_in_ = e.compressed_size;
    if (e.method == 8) {
      std::memset(&zs_, 0, sizeof zs_);
      if (inflateInit2(&zs_, -MAX_WBITS) != Z_OK) throw std::runtime_error("inflateInit failed");
      inflating_ = true;
    } else if (e.method != 0) {
      throw std::runtime_error(path.string() + ": unsupported compression method for " + e.name);
    }
  }
  ~EntryReader() {
    if (inflating_) inflateEnd(&zs_);
  }
  EntryReader(const EntryReader&) = delete;
  EntryReader& operator=(const EntryReader&) = delete;

  // Reads exactly n bytes of uncompressed data.
  void read(unsigned char* dst, std::size_t n) {
    if (produced_ + n > entry_.uncompressed_size) fail("entry shorter than its declared contents");
    if (!inflating_) {
      in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
      if (!in_) fail("truncated stored entry");
    } else {
      zs_.next_out = dst;
      std::size_t left = n;
      while (left > 0) {
        if (zs_.avail_in == 0 && remaining_in_ > 0) {
          const std::size_t chunk = static_cast<std::size_t>(std::min<std::uint64_t>(remaining_in_, buffer_.size()));
          in_.read(reinterpret_cast<char*>(buffer_.data()), static_cast<std::streamsize>(chunk));
          if (!in_) fail("truncated compressed entry");
          remaining_in_ -= chunk;
          zs_.next_in = buffer_.data();
          zs_.avail_in = static_cast<uInt>(chunk);
        }
        const uInt step = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
        zs_.avail_out = step;
        const int rc = inflate(&zs_, Z_NO_FLUSH);
        const std::size_t got = step - zs_.avail_out;
        left -= got;
        if (rc == Z_STREAM_END && left > 0) fail("compressed stream ended early");
        if (rc != Z_OK && rc != Z_STREAM_END && !(rc == Z_BUF_ERROR && got > 0)) fail("inflate error");
      }
    }
    for (std::size_t off = 0; off < n; off += (1u << 30)) {
      const auto len = static_cast<uInt>(std::min<std::size_t>(n - off, 1u << 30));
      crc_ = crc32(crc_, dst + off, len);
    }
    produced_ += n;
  }

  void finish() {
    if (produced_ != entry_.uncompressed_size) {
      std::ostringstream msg;
      msg << "consumed " << produced_ << " of " << entry_.uncompressed_size << " bytes";
      fail(msg.str());
    }
    if (crc_ != entry_.crc) {
      std::ostringstream msg;
      msg << std::hex << "checksum mismatch: expected crc32 " << entry_.crc << ", found " << crc_;
      fail(msg.str());
    }
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error(path_.string() + ": " + entry_.name + ": " + what);
  }

  std::ifstream& in_;
  ZipEntry entry_;
  fs::path path_;
  z_stream zs_{};
  bool inflating_ = false;
  std::uint64_t remaining_in_ = 0;
  std::uint64_t produced_ = 0;
  uLong crc_ = crc32(0L, Z_NULL, 0);
  std::vector<unsigned char> buffer_ = std::vector<unsigned char>(1 << 20);
};

struct NpyHeader {
  std::string descr;
  bool fortran_order = false;
  std::vector<std::uint64_t> shape;
};

NpyHeader read_npy_header(EntryReader& reader, const std::string& name) {
  unsigned char pre[10];
  reader.read(pre, 8);
  if (std::memcmp(pre, "\x93NUMPY", 6) != 0) throw std::runtime_error(name + ": not an .npy array");
  std::size_t header_len = 0;
  if (pre[6] == 1) {
    reader.read(pre + 8, 2);
    header_len = le16(pre + 8);
  } else {
    unsigned char len4[4];
    reader.read(len4, 4);
    header_len = le32(len4);
  }
  std::string text(header_len, '\0');
  reader.read(reinterpret_cast<unsigned char*>(text.data()), header_len);

  NpyHeader h;
  std::smatch m;
  if (std::regex_search(text, m, std::regex(R"('descr'\s*:\s*'([^']*)')"))) h.descr = m[1];
  if (std::regex_search(text, m, std::regex(R"('fortran_order'\s*:\s*(True|False))"))) h.fortran_order = m[1] == "True";
  if (std::regex_search(text, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))"))) {
    std::string dims = m[1];
    std::regex num(R"(\d+)");
    for (auto it = std::sregex_iterator(dims.begin(), dims.end(), num); it != std::sregex_iterator(); ++it) {
      h.shape.push_back(std::stoull(it->str()));
    }
  } else {
    throw std::runtime_error(name + ": .npy header has no shape");
  }
  if (h.fortran_order) throw std::runtime_error(name + ": fortran-ordered arrays are not supported");
  return h;
}

std::string shape_string(const std::vector<std::uint64_t>& s) {
  std::ostringstream out;
  out << "(";
  for (std::size_t i = 0; i < s.size(); ++i) out << (i ? ", " : "") << s[i];
  out << ")";
  return out.str();
}

const ZipEntry& find_entry(const std::vector<ZipEntry>& entries, const std::string& name, const fs::path& path) {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw std::runtime_error(path.string() + ": archive has no entry " + name);
}

}  // namespace

FactorArchiveLayout FactorArchiveLayout::dsprites() {
  FactorArchiveLayout l;
  l.side = 64;
  l.column_names = {"color", "shape", "scale", "orientation", "posX", "posY"};
  l.column_sizes = {1, 3, 6, 40, 32, 32};
  return l;
}

std::size_t FactorArchiveLayout::expected_count() const {
  std::size_t n = 1;
  for (int s : column_sizes) n *= static_cast<std::size_t>(s);
  return n;
}

FactorDataset load_factor_archive(const fs::path& path, const FactorArchiveLayout& layout) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const auto entries = read_zip_directory(in, path);
  const std::size_t expected_n = layout.expected_count();
  const std::size_t columns = layout.column_sizes.size();

  FactorDataset ds;
  {
    EntryReader reader(in, find_entry(entries, "imgs.npy", path), path);
    const NpyHeader h = read_npy_header(reader, "imgs.npy");
    const std::vector<std::uint64_t> want{expected_n, static_cast<std::uint64_t>(layout.side),
                                          static_cast<std::uint64_t>(layout.side)};
    if (h.shape != want) {
      throw std::runtime_error(path.string() + ": imgs shape mismatch: expected " + shape_string(want) + ", found " +
                               shape_string(h.shape));
    }
    if (h.descr != "|u1" && h.descr != "<u1" && h.descr != "|b1") {
      throw std::runtime_error(path.string() + ": imgs dtype mismatch: expected |u1, found " + h.descr);
    }
    ds.images.channels = 1;
    ds.images.side = layout.side;
    ds.images.data.resize(expected_n * layout.side * layout.side);
    reader.read(ds.images.data.data(), ds.images.data.size());
    reader.finish();
    for (auto& v : ds.images.data) {
      if (v > 1) throw std::runtime_error(path.string() + ": imgs contains non-binary pixel values");
      v = static_cast<std::uint8_t>(v * 255);
    }
  }

  std::vector<std::int64_t> classes(expected_n * columns);
  {
    EntryReader reader(in, find_entry(entries, "latents_classes.npy", path), path);
    const NpyHeader h = read_npy_header(reader, "latents_classes.npy");
    const std::vector<std::uint64_t> want{expected_n, columns};
    if (h.shape != want) {
      throw std::runtime_error(path.string() + ": latents_classes shape mismatch: expected " + shape_string(want) +
                               ", found " + shape_string(h.shape));
    }
    if (h.descr != "<i8") {
      throw std::runtime_error(path.string() + ": latents_classes dtype mismatch: expected <i8, found " + h.descr);
    }
    std::vector<unsigned char> raw(classes.size() * 8);
    reader.read(raw.data(), raw.size());
    reader.finish();
    for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = static_cast<std::int64_t>(le64(raw.data() + 8 * i));
  }

  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < columns; ++c) {
    if (!layout.drop_constant_columns || layout.column_sizes[c] > 1) kept.push_back(c);
  }
  for (std::size_t c : kept) {
    ds.factors.sizes.push_back(layout.column_sizes[c]);
    ds.factors.names.push_back(c < layout.column_names.size() ? layout.column_names[c] : "factor" + std::to_string(c));
  }
  ds.factors.values.reserve(expected_n * kept.size());
  for (std::size_t n = 0; n < expected_n; ++n) {
    for (std::size_t c = 0; c < columns; ++c) {
      const auto v = classes[n * columns + c];
      if (v < 0 || v >= layout.column_sizes[c]) {
        std::ostringstream msg;
        msg << path.string() << ": latents_classes column " << c << " value " << v << " outside [0, "
            << layout.column_sizes[c] << ")";
        throw std::runtime_error(msg.str());
      }
    }
    for (std::size_t c : kept) ds.factors.values.push_back(static_cast<int>(classes[n * columns + c]));
  }
  if (!ds.factors.is_full_grid()) {
    throw std::runtime_error(path.string() + ": factor grid is incomplete or has duplicate tuples");
  }
  return ds;
}

FactorDataset load_dsprites(const fs::path& path) { return load_factor_archive(path, FactorArchiveLayout::dsprites()); }

// ---------------------------------------------------------------------------
// synthetic squares

FactorDataset generate_synthetic(int side, const std::vector<int>& factor_sizes, std::uint64_t seed) {
  (void)seed;
  if (side < 16) throw std::invalid_argument("synthetic side must be >= 16");
  if (factor_sizes.size() < 2 || factor_sizes.size() > 4) {
    throw std::invalid_argument("synthetic dataset needs between 2 and 4 factors");
  }
  for (int s : factor_sizes)
    if (s < 1) throw std::invalid_argument("synthetic factor sizes must be positive");

  const int nx = factor_sizes[0];
  const int ny = factor_sizes[1];
  const int nscale = factor_sizes.size() > 2 ? factor_sizes[2] : 1;
  const int nrot = factor_sizes.size() > 3 ? factor_sizes[3] : 1;

  const int min_size = std::max(2, side / 8);
  const int max_size = nscale > 1 ? std::max(min_size + nscale - 1, side * 3 / 8) : std::max(min_size, side / 4);
  auto square_size = [&](int k) {
    if (nscale == 1) return max_size;
    return min_size + static_cast<int>(std::lround(double(k) * (max_size - min_size) / (nscale - 1)));
  };
  const int extent = nrot > 1 ? static_cast<int>(std::ceil(max_size * std::sqrt(2.0))) : max_size;
  const int available = side - extent;
  if (available < std::max(nx, ny) - 1 || available < 0) {
    std::ostringstream msg;
    msg << "squares up to " << extent << " px cannot take " << std::max(nx, ny) << " distinct positions on a " << side
        << " px canvas";
    throw std::invalid_argument(msg.str());
  }
  auto offset = [&](int i, int n) {
    if (n == 1) return available / 2;
    return static_cast<int>(std::floor(double(i) * available / (n - 1)));
  };

  FactorDataset ds;
  ds.factors.sizes = factor_sizes;
  const char* names[] = {"posX", "posY", "scale", "rotation"};
  ds.factors.names.assign(names, names + factor_sizes.size());
  std::size_t count = 1;
  for (int s : factor_sizes) count *= static_cast<std::size_t>(s);
  ds.images.channels = 1;
  ds.images.side = side;
  ds.images.data.assign(count * side * side, 0);
  ds.factors.values.reserve(count * factor_sizes.size());

  std::size_t n = 0;
  for (int ix = 0; ix < nx; ++ix) {
    for (int iy = 0; iy < ny; ++iy) {
      for (int is = 0; is < nscale; ++is) {
        for (int ir = 0; ir < nrot; ++ir, ++n) {
          const int s = square_size(is);
          const double left = offset(ix, nx) + (extent - s) / 2;
          const double top = offset(iy, ny) + (extent - s) / 2;
          const double cx = left + s * 0.5;
          const double cy = top + s * 0.5;
          const double angle = nrot > 1 ? (M_PI / 2.0) * ir / nrot : 0.0;
          const double ca = std::cos(angle);
          const double sa = std::sin(angle);
          std::uint8_t* img = ds.images.data.data() + n * side * side;
          for (int py = 0; py < side; ++py) {
            for (int px = 0; px < side; ++px) {
              const double dx = px + 0.5 - cx;
              const double dy = py + 0.5 - cy;
              const double u = ca * dx + sa * dy;
              const double v = -sa * dx + ca * dy;
              if (std::abs(u) < s * 0.5 && std::abs(v) < s * 0.5) img[py * side + px] = 255;
            }
          }
          const int f[] = {ix, iy, is, ir};
          for (std::size_t k = 0; k < factor_sizes.size(); ++k) ds.factors.values.push_back(f[k]);
        }
      }
    }
  }
  return ds;
}

namespace {
constexpr char kCacheMagic[8] = {'B', 'A', 'V', 'A', 'E', 'D', 'S', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
}  // namespace

// Native-endian cache: magic, N, C, side, K, sizes, float32 pixels, int32 factor table.
void save_dataset_cache(const fs::path& path, const FactorDataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kCacheMagic, sizeof kCacheMagic);
  put<std::uint64_t>(out, ds.images.size());
  put<std::int32_t>(out, ds.images.channels);
  put<std::int32_t>(out, ds.images.side);
  put<std::int32_t>(out, static_cast<std::int32_t>(ds.factors.num_factors()));
  for (int s : ds.factors.sizes) put<std::int32_t>(out, s);
  for (auto v : ds.images.data) put<float>(out, v / 255.0f);
  for (int v : ds.factors.values) put<std::int32_t>(out, v);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

FactorDataset load_dataset_cache(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCacheMagic, sizeof magic) != 0) {
    throw std::runtime_error(path.string() + ": not a dataset cache");
  }
  FactorDataset ds;
  const auto n = get<std::uint64_t>(in);
  ds.images.channels = get<std::int32_t>(in);
  ds.images.side = get<std::int32_t>(in);
  const auto k = get<std::int32_t>(in);
  if (!in || k < 1 || k > 64 || ds.images.channels < 1 || ds.images.side < 1) {
    throw std::runtime_error(path.string() + ": corrupt dataset cache header");
  }
  for (int i = 0; i < k; ++i) ds.factors.sizes.push_back(get<std::int32_t>(in));
  const char* names[] = {"posX", "posY", "scale", "rotation"};
  for (int i = 0; i < k; ++i) ds.factors.names.push_back(i < 4 ? names[i] : "factor" + std::to_string(i));
  ds.images.data.resize(n * ds.images.pixels_per_image());
  for (auto& v : ds.images.data) {
    const float f = get<float>(in);
    if (!(f >= 0.0f && f <= 1.0f)) throw std::runtime_error(path.string() + ": pixel outside [0,1]");
    const float scaled = f * 255.0f;
    if (scaled != std::round(scaled)) throw std::runtime_error(path.string() + ": pixel is not an 8-bit intensity");
    v = static_cast<std::uint8_t>(scaled);
  }
  ds.factors.values.resize(n * k);
  for (auto& v : ds.factors.values) v = get<std::int32_t>(in);
  if (!in) throw std::runtime_error(path.string() + ": truncated dataset cache");
  ds.factors.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// labeled folders

LabeledImageSet load_labeled_folder(const fs::path& root, int image_side) {
  if (image_side < 1) throw std::invalid_argument("image_side must be positive");
  if (!fs::is_directory(root)) throw std::runtime_error(root.string() + " is not a directory");
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) classes.push_back(e.path());
  std::sort(classes.begin(), classes.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  if (classes.empty()) throw std::runtime_error(root.string() + " contains no class directories");

  LabeledImageSet set;
  set.images.channels = 1;
  set.images.side = image_side;
  set.n_classes = static_cast<int>(classes.size());
  for (std::size_t label = 0; label < classes.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(classes[label]))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    if (files.empty()) throw std::runtime_error("class directory " + classes[label].string() + " is empty");
    set.class_names.push_back(classes[label].filename().string());
    for (const auto& f : files) {
      cv::Mat img = cv::imread(f.string(), cv::IMREAD_GRAYSCALE);
      if (img.empty()) throw std::runtime_error("cannot decode image " + f.string());
      if (img.depth() != CV_8U) img.convertTo(img, CV_8U);
      cv::Mat resized;
      if (img.rows == image_side && img.cols == image_side) {
        resized = img;
      } else {
        cv::resize(img, resized, cv::Size(image_side, image_side), 0, 0, cv::INTER_AREA);
      }
      for (int y = 0; y < image_side; ++y) {
        const auto* row = resized.ptr<std::uint8_t>(y);
        set.images.data.insert(set.images.data.end(), row, row + image_side);
      }
      set.labels.push_back(static_cast<int>(label));
    }
  }
  return set;
}

Split split_indices(std::size_t n, double heldout_fraction, std::uint64_t seed) {
  if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) {
    throw std::invalid_argument("held-out fraction must be in [0, 1)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  const auto held = static_cast<std::size_t>(std::llround(static_cast<double>(n) * heldout_fraction));
  Split s;
  s.heldout.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  std::sort(s.heldout.begin(), s.heldout.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

// ---------------------------------------------------------------------------
// factor-conditional sampling

FactorConditionalSampler::FactorConditionalSampler(const FactorTable& factors, std::uint64_t seed) : rng_(seed) {
  factors.validate();
  const std::size_t k_count = factors.num_factors();
  groups_.resize(k_count);
  values_.resize(k_count);
  for (std::size_t k = 0; k < k_count; ++k) groups_[k].resize(static_cast<std::size_t>(factors.sizes[k]));
  for (std::size_t n = 0; n < factors.rows(); ++n)
    for (std::size_t k = 0; k < k_count; ++k) groups_[k][static_cast<std::size_t>(factors.at(n, k))].push_back(n);
  for (std::size_t k = 0; k < k_count; ++k) {
    for (std::size_t v = 0; v < groups_[k].size(); ++v)
      if (!groups_[k][v].empty()) values_[k].push_back(static_cast<int>(v));
    if (values_[k].size() > 1) eligible_.push_back(static_cast<int>(k));
  }
  if (eligible_.empty()) throw std::invalid_argument("no factor has more than one value");
}

int FactorConditionalSampler::draw_factor() {
  std::uniform_int_distribution<std::size_t> pick(0, eligible_.size() - 1);
  return eligible_[pick(rng_)];
}

int FactorConditionalSampler::draw_value(int factor) {
  const auto& vals = values_[static_cast<std::size_t>(factor)];
  std::uniform_int_distribution<std::size_t> pick(0, vals.size() - 1);
  return vals[pick(rng_)];
}

std::size_t FactorConditionalSampler::draw_member(int factor, int value) {
  const auto& g = groups_[static_cast<std::size_t>(factor)][static_cast<std::size_t>(value)];
  std::uniform_int_distribution<std::size_t> pick(0, g.size() - 1);
  return g[pick(rng_)];
}

FactorPairs FactorConditionalSampler::sample_pairs(std::size_t n_pairs) {
  FactorPairs out;
  out.factor = draw_factor();
  out.pairs.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const int v = draw_value(out.factor);
    const std::size_t a = draw_member(out.factor, v);
    const std::size_t b = draw_member(out.factor, v);
    out.pairs.emplace_back(a, b);
  }
  return out;
}

FactorGroup FactorConditionalSampler::sample_group(std::size_t count) {
  FactorGroup out;
  out.factor = draw_factor();
  out.value = draw_value(out.factor);
  out.indices.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.indices.push_back(draw_member(out.factor, out.value));
  return out;
}

}  // namespace bavae
