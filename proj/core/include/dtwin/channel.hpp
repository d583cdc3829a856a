// SPDX-License-Identifier: Apache-2.0
#ifndef DTWIN_CHANNEL_HPP
#define DTWIN_CHANNEL_HPP

#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>

namespace dtwin {

/// Unbounded multi-producer message queue. receive() blocks until a message
/// arrives or the channel is closed and drained.
template <typename T> class Channel {
public:
  void send(T message) {
    {
      std::lock_guard lock(mutex_);
      if (closed_)
        return;
      queue_.push_back(std::move(message));
    }
    ready_.notify_one();
  }

  std::optional<T> receive() {
    std::unique_lock lock(mutex_);
    ready_.wait(lock, [this] { return closed_ || !queue_.empty(); });
    if (queue_.empty())
      return std::nullopt;
    T out = std::move(queue_.front());
    queue_.pop_front();
    return out;
  }

  std::optional<T> try_receive() {
    std::lock_guard lock(mutex_);
    if (queue_.empty())
      return std::nullopt;
    T out = std::move(queue_.front());
    queue_.pop_front();
    return out;
  }

  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    ready_.notify_all();
  }

private:
  std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<T> queue_;
  bool closed_ = false;
};

} // namespace dtwin

#endif // DTWIN_CHANNEL_HPP
