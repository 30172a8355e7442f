// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <unordered_map>
#include <utility>

namespace ckqti {

/// Process-wide accounting of tensor storage. Every Buffer registers its byte
/// size on construction and deregisters on destruction, so live_bytes() is the
/// exact sum of all live tensor payloads (data, grads, saved masks).
class MemoryTracker {
  public:
    using ShapeObserver = std::function<void(std::span<const std::size_t> shape, std::size_t bytes)>;

    static MemoryTracker& instance()
    {
        static MemoryTracker tracker;
        return tracker;
    }

    void on_alloc(const void* ptr, std::size_t bytes, std::span<const std::size_t> shape)
    {
        auto live = live_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
        total_.fetch_add(bytes, std::memory_order_relaxed);
        allocations_.fetch_add(1, std::memory_order_relaxed);
        auto peak = peak_.load(std::memory_order_relaxed);
        while (live > peak && !peak_.compare_exchange_weak(peak, live, std::memory_order_relaxed)) {
        }
        if (audit_.load(std::memory_order_relaxed)) {
            std::lock_guard<std::mutex> lock(mutex_);
            audit_table_[ptr] = bytes;
        }
        if (observer_) {
            observer_(shape, bytes);
        }
    }

    void on_free(const void* ptr, std::size_t bytes)
    {
        live_.fetch_sub(bytes, std::memory_order_relaxed);
        if (audit_.load(std::memory_order_relaxed)) {
            std::lock_guard<std::mutex> lock(mutex_);
            audit_table_.erase(ptr);
        }
    }

    [[nodiscard]] std::size_t live_bytes() const { return live_.load(std::memory_order_relaxed); }
    [[nodiscard]] std::size_t peak_bytes() const { return peak_.load(std::memory_order_relaxed); }
    /// Monotone count of every byte ever allocated.
    [[nodiscard]] std::size_t total_allocated_bytes() const { return total_.load(std::memory_order_relaxed); }
    [[nodiscard]] std::size_t allocation_count() const { return allocations_.load(std::memory_order_relaxed); }

    void set_peak(std::size_t value) { peak_.store(value, std::memory_order_relaxed); }
    void reset_peak() { peak_.store(live_bytes(), std::memory_order_relaxed); }

    /// Audit mode records each live buffer so the counter can be cross-checked
    /// against an independent walk. Buffers created before enabling are not in
    /// the table, so enable it only while no tensors are alive, or compare deltas.
    void set_audit(bool enabled)
    {
        std::lock_guard<std::mutex> lock(mutex_);
        audit_table_.clear();
        audit_.store(enabled, std::memory_order_relaxed);
    }

    [[nodiscard]] std::size_t audit_live_bytes() const
    {
        std::lock_guard<std::mutex> lock(mutex_);
        std::size_t sum = 0;
        for (const auto& [ptr, bytes] : audit_table_) {
            sum += bytes;
        }
        return sum;
    }

    /// Not thread-safe; install only from single-threaded code.
    void set_shape_observer(ShapeObserver observer) { observer_ = std::move(observer); }

  private:
    MemoryTracker() = default;

    std::atomic<std::size_t> live_{0};
    std::atomic<std::size_t> peak_{0};
    std::atomic<std::size_t> total_{0};
    std::atomic<std::size_t> allocations_{0};
    std::atomic<bool> audit_{false};
    mutable std::mutex mutex_;
    std::unordered_map<const void*, std::size_t> audit_table_;
    ShapeObserver observer_;
};

/// Measures peak live bytes above the level at scope entry. Nested scopes
/// restore the enclosing peak on exit.
class PeakScope {
  public:
    PeakScope()
        : tracker_(MemoryTracker::instance()),
          saved_peak_(tracker_.peak_bytes()),
          baseline_(tracker_.live_bytes()),
          total_at_start_(tracker_.total_allocated_bytes())
    {
        tracker_.reset_peak();
    }

    PeakScope(const PeakScope&) = delete;
    PeakScope& operator=(const PeakScope&) = delete;

    ~PeakScope() { tracker_.set_peak(std::max(saved_peak_, tracker_.peak_bytes())); }

    [[nodiscard]] std::size_t peak_bytes() const
    {
        auto peak = tracker_.peak_bytes();
        return peak > baseline_ ? peak - baseline_ : 0;
    }

    [[nodiscard]] std::size_t allocated_bytes() const { return tracker_.total_allocated_bytes() - total_at_start_; }

    [[nodiscard]] std::size_t baseline_bytes() const { return baseline_; }

  private:
    MemoryTracker& tracker_;
    std::size_t saved_peak_;
    std::size_t baseline_;
    std::size_t total_at_start_;
};

/// Owning, accounted array of trivially-copyable values.
template <typename T>
class Buffer {
  public:
    Buffer() = default;

    explicit Buffer(std::size_t count, std::span<const std::size_t> shape = {})
        : data_(count ? std::make_unique<T[]>(count) : nullptr), size_(count)
    {
        if (size_ != 0) {
            MemoryTracker::instance().on_alloc(data_.get(), bytes(), shape);
        }
    }

    Buffer(const Buffer&) = delete;
    Buffer& operator=(const Buffer&) = delete;

    Buffer(Buffer&& other) noexcept : data_(std::move(other.data_)), size_(std::exchange(other.size_, 0)) {}

    Buffer& operator=(Buffer&& other) noexcept
    {
        if (this != &other) {
            release();
            data_ = std::move(other.data_);
            size_ = std::exchange(other.size_, 0);
        }
        return *this;
    }

    ~Buffer() { release(); }

    void release()
    {
        if (size_ != 0) {
            MemoryTracker::instance().on_free(data_.get(), bytes());
        }
        data_.reset();
        size_ = 0;
    }

    [[nodiscard]] std::size_t size() const { return size_; }
    [[nodiscard]] bool empty() const { return size_ == 0; }
    [[nodiscard]] std::size_t bytes() const { return size_ * sizeof(T); }
    [[nodiscard]] T* data() { return data_.get(); }
    [[nodiscard]] const T* data() const { return data_.get(); }
    [[nodiscard]] std::span<T> span() { return {data_.get(), size_}; }
    [[nodiscard]] std::span<const T> span() const { return {data_.get(), size_}; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

  private:
    std::unique_ptr<T[]> data_;
    std::size_t size_ = 0;
};

}  // namespace ckqti
