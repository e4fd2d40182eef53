#pragma once

#include <cstddef>
#include <deque>
#include <stdexcept>
#include <utility>

namespace emusched {

// Fixed-capacity FIFO of recent samples. Once full, pushing evicts the
// oldest entry. Iteration runs oldest-first (insertion order).
template <typename T>
class RingBuffer {
 public:
  explicit RingBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) {
      throw std::invalid_argument("RingBuffer capacity must be positive");
    }
  }

  void push(T value) {
    if (entries_.size() == capacity_) {
      entries_.pop_front();
    }
    entries_.push_back(std::move(value));
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  bool full() const { return entries_.size() == capacity_; }

  // Index 0 is the oldest retained sample.
  const T& operator[](std::size_t i) const { return entries_[i]; }
  const T& front() const { return entries_.front(); }
  const T& back() const { return entries_.back(); }

  void clear() { entries_.clear(); }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::size_t capacity_;
  std::deque<T> entries_;
};

}  // namespace emusched
