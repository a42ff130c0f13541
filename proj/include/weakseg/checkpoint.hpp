#pragma once

#include <map>
#include <string>
#include <vector>

#include "weakseg/data_io.hpp"
#include "weakseg/tensor.hpp"

namespace weakseg {

/// Named arrays plus key=value metadata, stored little-endian as
/// "WSTF", u32 version, u32 count, then per array: u32 name length, name,
/// u32 rank, u32 dims[rank], f64 values; finally u32 length + metadata text.
class Archive {
public:
    struct Array {
        std::string name;
        Shape shape;
        Matrix value;
    };

    void put(const std::string& name, const Matrix& value);
    void put(const std::string& name, const Tensor& t) { put_shaped(name, t.shape(), t.value()); }
    void put_shaped(const std::string& name, Shape shape, const Matrix& value);
    void put_vector(const std::string& name, const std::vector<double>& values);

    bool has(const std::string& name) const;
    const Array& get(const std::string& name) const;
    std::vector<double> get_vector(const std::string& name) const;

    void set_meta(const std::string& key, const std::string& value) { meta_[key] = value; }
    const std::string& meta(const std::string& key) const;
    bool has_meta(const std::string& key) const { return meta_.count(key) != 0; }
    const std::map<std::string, std::string>& metadata() const { return meta_; }
    const std::vector<Array>& arrays() const { return arrays_; }

    void save(const fs::path& path) const;
    static Archive load(const fs::path& path);

private:
    std::vector<Array> arrays_;
    std::map<std::string, std::string> meta_;
};

}  // namespace weakseg
