#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mfenkf/linalg.hpp"

namespace mfenkf {

/// Minimal portable binary container for named numeric arrays
/// (little-endian, float64 / uint64 payloads). Used for the POD basis
/// archive, projection-pair files and filter checkpoints.
///
/// Layout: magic "MFAR" | u32 version | u32 entry count, then per entry:
/// u32 name length | name bytes | u32 dtype (0=f64, 1=u64) | u32 rank |
/// u64 dims[rank] | payload.
class ArrayArchive {
public:
    void put(const std::string& name, const Matrix& m);
    void put(const std::string& name, const Vector& v);
    void put_scalar(const std::string& name, double v);
    void put_u64(const std::string& name, const std::vector<std::uint64_t>& v);

    bool has(const std::string& name) const;
    Matrix matrix(const std::string& name) const;       // rank-2 entries
    Vector vector(const std::string& name) const;       // rank-1 entries
    double scalar(const std::string& name) const;       // rank-0/1 single value
    std::vector<std::uint64_t> u64(const std::string& name) const;

    void save(std::ostream& out) const;
    static ArrayArchive load(std::istream& in);
    void save_file(const std::string& path) const;
    static ArrayArchive load_file(const std::string& path);

private:
    struct Entry {
        std::uint32_t dtype = 0;  // 0 = f64, 1 = u64
        std::vector<std::uint64_t> dims;
        std::vector<double> f64;
        std::vector<std::uint64_t> u64;
    };
    const Entry& get(const std::string& name) const;
    std::map<std::string, Entry> entries_;
};

}  // namespace mfenkf
