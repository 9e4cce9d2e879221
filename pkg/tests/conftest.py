from __future__ import annotations

import pytest

from feedlab.model import Attachment, FeedPage, Post, SocialMetrics


def make_post(pid, text="hello world", author="acct_a", likes=10, comments=2,
              shares=1, created_at=1_750_000_000_000, attachments=(), **kwargs):
    return Post(post_id=pid, author_id=author, text=text, created_at=created_at,
                metrics=SocialMetrics(likes=likes, comments=comments, shares=shares),
                attachments=tuple(attachments), **kwargs)


def make_page(n=5, prefix="p", cursor="", **kwargs):
    return FeedPage(cursor=cursor,
                    posts=tuple(make_post(f"{prefix}{i}", **kwargs) for i in range(n)))


@pytest.fixture
def page5():
    return make_page(5)


def video(i=0):
    return Attachment("video", f"https://x.example/v/{i}")
