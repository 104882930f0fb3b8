"""服务层：数据、双层优化、产物读写与多种子扫描。"""
