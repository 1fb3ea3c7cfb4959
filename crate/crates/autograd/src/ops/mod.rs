mod conv;
mod elementwise;
mod linalg;
mod reduce;
mod resize;
mod shape;
