#pragma once

#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace invdesign {

/// 64-byte aligned storage. Vectorized reductions peel a prologue up to the
/// first aligned element, so a fixed alignment keeps results independent of
/// where the heap happens to place a buffer.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

using AlignedVector = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles with an explicit shape.
struct Tensor {
    std::vector<int> shape;
    AlignedVector data;

    Tensor() = default;
    explicit Tensor(std::vector<int> shape_, double fill = 0.0)
        : shape(std::move(shape_)), data(numel_of(shape), fill) {}

    static std::size_t numel_of(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int s : shape) {
            if (s <= 0) throw ShapeMismatch("tensor dimensions must be positive");
            n *= static_cast<std::size_t>(s);
        }
        return n;
    }

    std::size_t size() const noexcept { return data.size(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    std::span<double> span() noexcept { return data; }
    std::span<const double> span() const noexcept { return data; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool operator==(const Tensor&) const = default;
};

inline std::string shape_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace invdesign
