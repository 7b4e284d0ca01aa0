use std::sync::{Arc, Condvar, Mutex};

use super::{
    BackendError, BinaryMask, CaptionBackend, DetectBackend, EmbedBackend, GenerateBackend,
    GenerateRequest, RawDetection, SegmentBackend,
};
use crate::types::RgbImage;

/// Counting semaphore bounding concurrent calls into one backend.
#[derive(Debug)]
pub struct Semaphore {
    available: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            available: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *available == 0 {
            available = self.freed.wait(available).unwrap_or_else(|e| e.into_inner());
        }
        *available -= 1;
        Permit { sem: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut available = self.sem.available.lock().unwrap_or_else(|e| e.into_inner());
        *available += 1;
        self.sem.freed.notify_one();
    }
}

/// Wraps any backend so at most `max_in_flight` calls run at once.
pub struct Bounded<B> {
    inner: B,
    permits: Arc<Semaphore>,
}

impl<B> Bounded<B> {
    pub fn new(inner: B, max_in_flight: usize) -> Self {
        Self {
            inner,
            permits: Arc::new(Semaphore::new(max_in_flight)),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: CaptionBackend> CaptionBackend for Bounded<B> {
    fn caption(&self, image: &RgbImage) -> Result<String, BackendError> {
        let _permit = self.permits.acquire();
        self.inner.caption(image)
    }
}

impl<B: DetectBackend> DetectBackend for Bounded<B> {
    fn detect(
        &self,
        image: &RgbImage,
        class_names: &[String],
        threshold: f64,
    ) -> Result<Vec<RawDetection>, BackendError> {
        let _permit = self.permits.acquire();
        self.inner.detect(image, class_names, threshold)
    }
}

impl<B: SegmentBackend> SegmentBackend for Bounded<B> {
    fn segment(&self, image: &RgbImage, boxes: &[[f64; 4]]) -> Result<Vec<BinaryMask>, BackendError> {
        let _permit = self.permits.acquire();
        self.inner.segment(image, boxes)
    }
}

impl<B: GenerateBackend> GenerateBackend for Bounded<B> {
    fn generate(&self, request: &GenerateRequest) -> Result<RgbImage, BackendError> {
        let _permit = self.permits.acquire();
        self.inner.generate(request)
    }
}

impl<B: EmbedBackend> EmbedBackend for Bounded<B> {
    fn embed(&self, image: &RgbImage, model: &str) -> Result<Vec<f64>, BackendError> {
        let _permit = self.permits.acquire();
        self.inner.embed(image, model)
    }
}
