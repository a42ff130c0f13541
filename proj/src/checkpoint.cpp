#include "weakseg/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "binary_io.hpp"

namespace weakseg {

namespace {
constexpr char kMagic[4] = {'W', 'S', 'T', 'F'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void Archive::put(const std::string& name, const Matrix& value) { put_shaped(name, {value.rows(), value.cols()}, value); }

void Archive::put_shaped(const std::string& name, Shape shape, const Matrix& value) {
    if (has(name)) throw std::invalid_argument("Archive: duplicate array '" + name + "'");
    if (shape_size(shape) != value.size()) throw DimensionError("Archive: shape does not match data for '" + name + "'");
    arrays_.push_back({name, std::move(shape), value});
}

void Archive::put_vector(const std::string& name, const std::vector<double>& values) {
    Matrix m(1, static_cast<Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) m(0, static_cast<Index>(i)) = values[i];
    put_shaped(name, {static_cast<Index>(values.size())}, m);
}

bool Archive::has(const std::string& name) const {
    for (const auto& a : arrays_)
        if (a.name == name) return true;
    return false;
}

const Archive::Array& Archive::get(const std::string& name) const {
    for (const auto& a : arrays_)
        if (a.name == name) return a;
    throw std::out_of_range("archive has no array '" + name + "'");
}

std::vector<double> Archive::get_vector(const std::string& name) const {
    const Matrix& m = get(name).value;
    return std::vector<double>(m.data(), m.data() + m.size());
}

const std::string& Archive::meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end()) throw std::out_of_range("archive has no metadata '" + key + "'");
    return it->second;
}

void Archive::save(const fs::path& path) const {
    std::ostringstream buf(std::ios::binary);
    buf.write(kMagic, 4);
    binio::put_u32(buf, kVersion);
    binio::put_u32(buf, static_cast<std::uint32_t>(arrays_.size()));
    for (const auto& a : arrays_) {
        binio::put_u32(buf, static_cast<std::uint32_t>(a.name.size()));
        binio::put_bytes(buf, a.name);
        binio::put_u32(buf, static_cast<std::uint32_t>(a.shape.size()));
        for (Index d : a.shape) binio::put_u32(buf, static_cast<std::uint32_t>(d));
        for (Index i = 0; i < a.value.size(); ++i) binio::put_f64(buf, a.value.data()[i]);
    }
    std::string text;
    for (const auto& [k, v] : meta_) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
            throw std::invalid_argument("Archive: metadata '" + k + "' cannot be stored as key=value");
        text += k + "=" + v + "\n";
    }
    binio::put_u32(buf, static_cast<std::uint32_t>(text.size()));
    binio::put_bytes(buf, text);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    binio::put_bytes(out, buf.str());
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

Archive Archive::load(const fs::path& path) {
    binio::Reader r(binio::slurp(path.string()));
    if (r.bytes(4, "magic") != std::string(kMagic, 4)) throw FormatError("bad checkpoint magic in " + path.string(), 0);
    if (r.u32("version") != kVersion) throw FormatError("unsupported checkpoint version", 4);
    const std::uint32_t count = r.u32("array count");
    Archive a;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.bytes(r.u32("name length"), "array name");
        const std::uint32_t rank = r.u32("rank");
        if (rank > 8) throw FormatError("implausible rank for '" + name + "'", r.offset() - 4);
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32("dimension"));
        const Index n = shape_size(shape);
        r.need(static_cast<std::uint64_t>(n) * 8, "array payload");
        Matrix m;
        if (rank == 0)
            m.resize(1, 1);
        else if (rank == 1)
            m.resize(1, shape[0]);
        else
            m.resize(n / std::max<Index>(shape.back(), 1), shape.back());
        for (Index k = 0; k < n; ++k) m.data()[k] = r.f64("array value");
        try {
            a.put_shaped(name, shape, m);
        } catch (const std::exception& e) {
            throw FormatError(e.what(), r.offset());
        }
    }
    const std::string text = r.bytes(r.u32("metadata length"), "metadata");
    if (!r.at_end()) throw FormatError("trailing bytes after checkpoint", r.offset());
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("metadata line without '='", r.offset());
        a.meta_[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return a;
}

}  // namespace weakseg
