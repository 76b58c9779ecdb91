#include "mfenkf/archive.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace mfenkf {
namespace {

constexpr char kMagic[4] = {'M', 'F', 'A', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    require(static_cast<bool>(in), "ArchiveCorrupt", "truncated stream");
    return v;
}

}  // namespace

void ArrayArchive::put(const std::string& name, const Matrix& m) {
    Entry e;
    e.dtype = 0;
    e.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    e.f64.resize(static_cast<std::size_t>(m.size()));
    // row-major on disk
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            e.f64[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
    entries_[name] = std::move(e);
}

void ArrayArchive::put(const std::string& name, const Vector& v) {
    Entry e;
    e.dtype = 0;
    e.dims = {static_cast<std::uint64_t>(v.size())};
    e.f64.assign(v.data(), v.data() + v.size());
    entries_[name] = std::move(e);
}

void ArrayArchive::put_scalar(const std::string& name, double v) {
    Entry e;
    e.dtype = 0;
    e.dims = {1};
    e.f64 = {v};
    entries_[name] = std::move(e);
}

void ArrayArchive::put_u64(const std::string& name, const std::vector<std::uint64_t>& v) {
    Entry e;
    e.dtype = 1;
    e.dims = {static_cast<std::uint64_t>(v.size())};
    e.u64 = v;
    entries_[name] = std::move(e);
}

bool ArrayArchive::has(const std::string& name) const { return entries_.count(name) != 0; }

const ArrayArchive::Entry& ArrayArchive::get(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), "ArchiveMissingEntry", name);
    return it->second;
}

Matrix ArrayArchive::matrix(const std::string& name) const {
    const Entry& e = get(name);
    require(e.dtype == 0 && e.dims.size() == 2, "ArchiveTypeMismatch", name);
    const auto rows = static_cast<Eigen::Index>(e.dims[0]);
    const auto cols = static_cast<Eigen::Index>(e.dims[1]);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = e.f64[static_cast<std::size_t>(i * cols + j)];
    return m;
}

Vector ArrayArchive::vector(const std::string& name) const {
    const Entry& e = get(name);
    require(e.dtype == 0 && e.dims.size() == 1, "ArchiveTypeMismatch", name);
    return Eigen::Map<const Vector>(e.f64.data(), static_cast<Eigen::Index>(e.f64.size()));
}

double ArrayArchive::scalar(const std::string& name) const {
    const Entry& e = get(name);
    require(e.dtype == 0 && e.f64.size() == 1, "ArchiveTypeMismatch", name);
    return e.f64[0];
}

std::vector<std::uint64_t> ArrayArchive::u64(const std::string& name) const {
    const Entry& e = get(name);
    require(e.dtype == 1, "ArchiveTypeMismatch", name);
    return e.u64;
}

void ArrayArchive::save(std::ostream& out) const {
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {
        write_pod(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, e.dtype);
        write_pod(out, static_cast<std::uint32_t>(e.dims.size()));
        for (auto d : e.dims) write_pod(out, d);
        if (e.dtype == 0)
            out.write(reinterpret_cast<const char*>(e.f64.data()),
                      static_cast<std::streamsize>(e.f64.size() * sizeof(double)));
        else
            out.write(reinterpret_cast<const char*>(e.u64.data()),
                      static_cast<std::streamsize>(e.u64.size() * sizeof(std::uint64_t)));
    }
}

ArrayArchive ArrayArchive::load(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    require(static_cast<bool>(in) && std::memcmp(magic, kMagic, 4) == 0, "ArchiveCorrupt",
            "bad magic");
    const auto version = read_pod<std::uint32_t>(in);
    require(version == kVersion, "ArchiveCorrupt", "unsupported version");
    const auto count = read_pod<std::uint32_t>(in);
    ArrayArchive ar;
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto name_len = read_pod<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        Entry e;
        e.dtype = read_pod<std::uint32_t>(in);
        const auto rank = read_pod<std::uint32_t>(in);
        std::uint64_t total = 1;
        e.dims.resize(rank);
        for (auto& d : e.dims) {
            d = read_pod<std::uint64_t>(in);
            total *= d;
        }
        if (e.dtype == 0) {
            e.f64.resize(total);
            in.read(reinterpret_cast<char*>(e.f64.data()),
                    static_cast<std::streamsize>(total * sizeof(double)));
        } else {
            e.u64.resize(total);
            in.read(reinterpret_cast<char*>(e.u64.data()),
                    static_cast<std::streamsize>(total * sizeof(std::uint64_t)));
        }
        require(static_cast<bool>(in), "ArchiveCorrupt", "truncated payload");
        ar.entries_[name] = std::move(e);
    }
    return ar;
}

void ArrayArchive::save_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "FileOpenFailed", path);
    save(out);
}

ArrayArchive ArrayArchive::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "FileOpenFailed", path);
    return load(in);
}

}  // namespace mfenkf
