#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <new>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace dm::nn {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// 64-byte aligned storage. Vectorized kernels choose their loop split from
/// the buffer address, so a fixed alignment keeps results reproducible.
template <typename T> struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U> AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }

    template <typename U> bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T> using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor.
template <typename T> struct Tensor {
    Shape shape;
    AlignedVector<T> values;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), values(shape_size(shape), fill) {}

    std::size_t size() const { return values.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
    T* data() { return values.data(); }
    const T* data() const { return values.data(); }

    template <typename U> Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.values.assign(values.begin(), values.end());
        return out;
    }

    bool operator==(const Tensor&) const = default;
};

/// Next value of a process-wide counter; ParamSet versions come from it so
/// two distinct mutations never share a version.
std::uint64_t next_version();

/// Named tensors with fixed shapes, in insertion order.
template <typename T> class ParamSet {
public:
    void add(std::string name, Tensor<T> tensor) {
        if (index_.count(name) != 0) {
            throw std::invalid_argument("duplicate tensor name '" + name + "'");
        }
        index_.emplace(name, tensors_.size());
        names_.push_back(std::move(name));
        tensors_.push_back(std::move(tensor));
        touch();
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no tensor named '" + name + "'");
        return tensors_[it->second];
    }

    /// Mutable access; invalidates forward caches taken against this set.
    Tensor<T>& at_mut(const std::string& name) {
        touch();
        return const_cast<Tensor<T>&>(static_cast<const ParamSet&>(*this).at(name));
    }

    const std::vector<std::string>& names() const { return names_; }
    const Tensor<T>& tensor(std::size_t i) const { return tensors_.at(i); }
    Tensor<T>& tensor_mut(std::size_t i) {
        touch();
        return tensors_.at(i);
    }
    std::size_t size() const { return tensors_.size(); }
    bool empty() const { return tensors_.empty(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

    std::uint64_t version() const { return version_; }
    void touch() { version_ = next_version(); }

    ParamSet zeros_like() const {
        ParamSet out;
        for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor<T>(tensors_[i].shape));
        return out;
    }

    void fill(T value) {
        for (auto& t : tensors_) std::fill(t.values.begin(), t.values.end(), value);
        touch();
    }

    /// Tensors whose names start with `prefix`.
    ParamSet filter_prefix(const std::string& prefix) const {
        ParamSet out;
        for (std::size_t i = 0; i < size(); ++i) {
            if (names_[i].compare(0, prefix.size(), prefix) == 0) out.add(names_[i], tensors_[i]);
        }
        return out;
    }

    /// Same tensors with `from` prefix replaced by `to`.
    ParamSet rename_prefix(const std::string& from, const std::string& to) const {
        ParamSet out;
        for (std::size_t i = 0; i < size(); ++i) {
            if (names_[i].compare(0, from.size(), from) == 0) {
                out.add(to + names_[i].substr(from.size()), tensors_[i]);
            }
        }
        return out;
    }

    void merge(const ParamSet& other) {
        for (std::size_t i = 0; i < other.size(); ++i) add(other.names_[i], other.tensors_[i]);
    }

    template <typename U> ParamSet<U> cast() const {
        ParamSet<U> out;
        for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
        return out;
    }

    /// Compares names, shapes and values (not versions).
    bool operator==(const ParamSet& other) const { return names_ == other.names_ && tensors_ == other.tensors_; }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
    std::uint64_t version_ = next_version();
};

} // namespace dm::nn
