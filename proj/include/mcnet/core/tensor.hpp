#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcnet {

// Dense row-major double tensor. Rank is dynamic (0 = scalar, up to 4 used).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)), v_(numel_of(shape_), 0.0) {}

    Tensor(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), v_(std::move(data)) {
        if (static_cast<std::int64_t>(v_.size()) != numel_of(shape_)) {
            throw std::invalid_argument("Tensor: data size does not match shape");
        }
    }

    static Tensor scalar(double x) { return Tensor({}, {x}); }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double x) {
        Tensor t(std::move(shape));
        for (auto& e : t.v_) e = x;
        return t;
    }

    static std::int64_t numel_of(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(v_.size()); }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    std::vector<double>& vec() { return v_; }
    const std::vector<double>& vec() const { return v_; }

    double& operator[](std::int64_t i) { return v_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return v_[static_cast<std::size_t>(i)]; }

    // Scalar access
    double value() const {
        if (numel() != 1) throw std::logic_error("Tensor::value: not a scalar");
        return v_[0];
    }

    // 2-D access (rows, cols)
    double& at(int i, int j) {
        return v_[static_cast<std::size_t>(i) * shape_[1] + j];
    }
    double at(int i, int j) const {
        return v_[static_cast<std::size_t>(i) * shape_[1] + j];
    }

    // 3-D access (c, h, w)
    double& at(int c, int h, int w) {
        return v_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }
    double at(int c, int h, int w) const {
        return v_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }

    // 4-D access (n, c, h, w)
    double& at(int n, int c, int h, int w) {
        return v_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at(int n, int c, int h, int w) const {
        return v_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(double x) {
        for (auto& e : v_) e = x;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const { return shape_str(shape_); }

    static std::string shape_str(const std::vector<int>& s) {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) os << ",";
            os << s[i];
        }
        os << ")";
        return os.str();
    }

private:
    std::vector<int> shape_;
    std::vector<double> v_;
};

inline void check_shape(const Tensor& t, const std::vector<int>& want, const char* what) {
    if (t.shape() != want) {
        throw std::invalid_argument(std::string(what) + ": expected shape " +
                                    Tensor::shape_str(want) + ", got " + t.shape_str());
    }
}

}  // namespace mcnet
